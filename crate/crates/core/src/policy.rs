//! Question-selection policies.
//!
//! * greedy: one-step lookahead, minimizing the expected posterior target
//!   uncertainty, recomputed from scratch at every step;
//! * non-adaptive: a user-independent ordered list chosen by forward greedy
//!   selection on a Monte Carlo estimate of the expected posterior target
//!   uncertainty (common random numbers across candidates);
//! * random, random-fixed and full baselines.
//!
//! Every policy is prefix-consistent: the questions asked under budget `T`
//! are a prefix of those asked under any larger budget for the same user and
//! seed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{LikelihoodTensor, ModelError, PersonaPrior, SessionState};
use crate::scalar::{log_sum_exp, Scalar};
use crate::scoring::{weights_target_uncertainty, ScoringError, UncertaintyKind};

/// Default Monte Carlo sample count for the non-adaptive design.
pub const DEFAULT_MC_SAMPLES: usize = 2_000;

// Below this much work per greedy step the candidate loop stays sequential.
const PARALLEL_WORK_THRESHOLD: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("budget-exceeds-feasible: no unqueried feasible question left")]
    BudgetExceedsFeasible,
    #[error("budget {budget} exceeds the {feasible} feasible questions")]
    BudgetTooLarge { budget: usize, feasible: usize },
    #[error("candidate {0} was already queried")]
    CandidateQueried(usize),
    #[error("candidate {0} is a target question")]
    CandidateIsTarget(usize),
    #[error("mc_samples must be positive")]
    ZeroMcSamples,
    #[error("invalid question list: {0}")]
    InvalidList(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Selection policy. List-based policies carry their precomputed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "order")]
pub enum PolicyKind {
    Greedy,
    Nonadaptive(Vec<usize>),
    Random,
    RandomFixed(Vec<usize>),
    Full,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Greedy => "greedy",
            PolicyKind::Nonadaptive(_) => "nonadaptive",
            PolicyKind::Random => "random",
            PolicyKind::RandomFixed(_) => "random_fixed",
            PolicyKind::Full => "full",
        }
    }

    /// Checks that a precomputed list holds distinct feasible questions.
    pub fn validate(&self, feasible: &[usize]) -> Result<(), PolicyError> {
        let list = match self {
            PolicyKind::Nonadaptive(l) | PolicyKind::RandomFixed(l) => l,
            _ => return Ok(()),
        };
        let mut seen = std::collections::HashSet::new();
        for &q in list {
            if !feasible.contains(&q) {
                return Err(PolicyError::InvalidList(format!(
                    "question {q} is not feasible"
                )));
            }
            if !seen.insert(q) {
                return Err(PolicyError::InvalidList(format!(
                    "question {q} listed twice"
                )));
            }
        }
        Ok(())
    }
}

/// Expected posterior target uncertainty after asking `question`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookaheadScore<S> {
    pub question: usize,
    pub expected_uncertainty: S,
}

/// Exact one-step lookahead `Σ_k p(Y_x = k | h) · U(targets | h, Y_x = k)`.
pub fn greedy_lookahead<S: Scalar>(
    state: &SessionState<S>,
    candidate: usize,
    targets: &[usize],
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
) -> Result<LookaheadScore<S>, PolicyError> {
    check_targets(targets, tensor)?;
    if candidate >= tensor.n_questions() {
        return Err(ModelError::QuestionOutOfRange {
            question: candidate,
            n_questions: tensor.n_questions(),
        }
        .into());
    }
    if state.has_queried(candidate) {
        return Err(PolicyError::CandidateQueried(candidate));
    }
    if targets.contains(&candidate) {
        return Err(PolicyError::CandidateIsTarget(candidate));
    }
    let mut scratch = Scratch::new(tensor);
    Ok(LookaheadScore {
        question: candidate,
        expected_uncertainty: lookahead_unchecked(
            state.posterior().weights(),
            candidate,
            targets,
            tensor,
            kind,
            &mut scratch,
        ),
    })
}

struct Scratch<S> {
    hypothetical: Vec<S>,
    predictive: Vec<S>,
}

impl<S: Scalar> Scratch<S> {
    fn new(tensor: &LikelihoodTensor<S>) -> Self {
        Self {
            hypothetical: vec![S::zero(); tensor.n_personas()],
            predictive: vec![S::zero(); tensor.n_categories()],
        }
    }
}

fn lookahead_unchecked<S: Scalar>(
    weights: &[S],
    candidate: usize,
    targets: &[usize],
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
    scratch: &mut Scratch<S>,
) -> S {
    let mut expected = S::zero();
    for k in 0..tensor.n_categories() {
        let mut p_k = S::zero();
        for (p, (h, &w)) in scratch.hypothetical.iter_mut().zip(weights).enumerate() {
            *h = w * tensor.prob(p, candidate, k);
            p_k += *h;
        }
        if !(p_k > S::zero()) {
            continue;
        }
        for h in scratch.hypothetical.iter_mut() {
            *h /= p_k;
        }
        let u = weights_target_uncertainty(
            &scratch.hypothetical,
            targets,
            tensor,
            kind,
            &mut scratch.predictive,
        );
        expected += p_k * u;
    }
    expected
}

fn check_targets<S: Scalar>(
    targets: &[usize],
    tensor: &LikelihoodTensor<S>,
) -> Result<(), PolicyError> {
    if targets.is_empty() {
        return Err(ScoringError::EmptyTargets.into());
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= tensor.n_questions()) {
        return Err(ModelError::QuestionOutOfRange {
            question: t,
            n_questions: tensor.n_questions(),
        }
        .into());
    }
    Ok(())
}

/// Lookahead scores for every candidate, in candidate order.
pub fn greedy_scores<S: Scalar>(
    state: &SessionState<S>,
    candidates: &[usize],
    targets: &[usize],
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
) -> Result<Vec<LookaheadScore<S>>, PolicyError> {
    check_targets(targets, tensor)?;
    for &c in candidates {
        if c >= tensor.n_questions() {
            return Err(ModelError::QuestionOutOfRange {
                question: c,
                n_questions: tensor.n_questions(),
            }
            .into());
        }
        if targets.contains(&c) {
            return Err(PolicyError::CandidateIsTarget(c));
        }
        if state.has_queried(c) {
            return Err(PolicyError::CandidateQueried(c));
        }
    }
    let weights = state.posterior().weights();
    let score = |scratch: &mut Scratch<S>, &c: &usize| LookaheadScore {
        question: c,
        expected_uncertainty: lookahead_unchecked(weights, c, targets, tensor, kind, scratch),
    };
    let work = candidates.len() * tensor.n_personas() * tensor.n_categories() * (targets.len() + 1);
    if work >= PARALLEL_WORK_THRESHOLD {
        Ok(candidates
            .par_iter()
            .map_init(|| Scratch::new(tensor), score)
            .collect())
    } else {
        let mut scratch = Scratch::new(tensor);
        Ok(candidates.iter().map(|c| score(&mut scratch, c)).collect())
    }
}

/// Lowest score wins; ties go to the lowest question index.
fn argmin_by_score<S: Scalar>(scores: &[LookaheadScore<S>]) -> Option<LookaheadScore<S>> {
    let mut best: Option<LookaheadScore<S>> = None;
    for s in scores {
        best = match best {
            None => Some(*s),
            Some(b) if s.expected_uncertainty < b.expected_uncertainty => Some(*s),
            Some(b)
                if s.expected_uncertainty == b.expected_uncertainty && s.question < b.question =>
            {
                Some(*s)
            }
            keep => keep,
        };
    }
    best
}

fn remaining(state_queried: &[usize], feasible: &[usize]) -> Vec<usize> {
    let mut rest: Vec<usize> = feasible
        .iter()
        .copied()
        .filter(|q| !state_queried.contains(q))
        .collect();
    rest.sort_unstable();
    rest.dedup();
    rest
}

/// Chooses the next question to ask.
///
/// `rng` is only consumed by the random policy, which draws exactly one
/// `random_range` per step over the sorted remaining feasible questions.
pub fn select_next<S: Scalar, R: Rng + ?Sized>(
    state: &SessionState<S>,
    feasible: &[usize],
    policy: &PolicyKind,
    targets: &[usize],
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
    rng: &mut R,
) -> Result<usize, PolicyError> {
    let rest = remaining(state.queried(), feasible);
    if rest.is_empty() {
        return Err(PolicyError::BudgetExceedsFeasible);
    }
    match policy {
        PolicyKind::Greedy => {
            let scores = greedy_scores(state, &rest, targets, tensor, kind)?;
            let best = argmin_by_score(&scores).expect("non-empty");
            if kind == UncertaintyKind::ShannonEntropy && cfg!(debug_assertions) {
                let mut buf = vec![S::zero(); tensor.n_categories()];
                let now = weights_target_uncertainty(
                    state.posterior().weights(),
                    targets,
                    tensor,
                    kind,
                    &mut buf,
                );
                debug_assert!(
                    best.expected_uncertainty <= now + S::sum_tolerance(),
                    "expected posterior entropy {} exceeds current {}",
                    best.expected_uncertainty,
                    now
                );
            }
            Ok(best.question)
        }
        PolicyKind::Random => Ok(rest[rng.random_range(0..rest.len())]),
        PolicyKind::Full => Ok(rest[0]),
        PolicyKind::Nonadaptive(list) | PolicyKind::RandomFixed(list) => list
            .iter()
            .copied()
            .find(|q| rest.binary_search(q).is_ok())
            .ok_or(PolicyError::BudgetExceedsFeasible),
    }
}

/// Greedy selection that also reports the winning lookahead score.
pub fn greedy_step<S: Scalar>(
    state: &SessionState<S>,
    feasible: &[usize],
    targets: &[usize],
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
) -> Result<LookaheadScore<S>, PolicyError> {
    let rest = remaining(state.queried(), feasible);
    if rest.is_empty() {
        return Err(PolicyError::BudgetExceedsFeasible);
    }
    let scores = greedy_scores(state, &rest, targets, tensor, kind)?;
    Ok(argmin_by_score(&scores).expect("non-empty"))
}

/// Runs one adaptive session against a user's recorded answers.
///
/// Questions the user did not answer are infeasible. The session asks
/// `min(budget, |user-feasible|)` questions.
#[allow(clippy::too_many_arguments)]
pub fn run_session<S: Scalar, R: Rng + ?Sized>(
    responses: &[Option<u8>],
    budget: usize,
    policy: &PolicyKind,
    feasible: &[usize],
    targets: &[usize],
    prior: &PersonaPrior<S>,
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
    rng: &mut R,
) -> Result<SessionState<S>, PolicyError> {
    run_session_with_checkpoints(
        responses,
        budget,
        policy,
        feasible,
        targets,
        prior,
        tensor,
        kind,
        rng,
        &[],
        |_, _| {},
    )
}

/// [`run_session`] that calls `on_checkpoint(c, state)` for every requested
/// checkpoint `c`, with the state after `min(c, session length)` questions.
#[allow(clippy::too_many_arguments)]
pub fn run_session_with_checkpoints<S: Scalar, R: Rng + ?Sized>(
    responses: &[Option<u8>],
    budget: usize,
    policy: &PolicyKind,
    feasible: &[usize],
    targets: &[usize],
    prior: &PersonaPrior<S>,
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
    rng: &mut R,
    checkpoints: &[usize],
    mut on_checkpoint: impl FnMut(usize, &SessionState<S>),
) -> Result<SessionState<S>, PolicyError> {
    if responses.len() != tensor.n_questions() {
        return Err(ModelError::DimensionMismatch(format!(
            "response vector has {} entries, tensor has {} questions",
            responses.len(),
            tensor.n_questions()
        ))
        .into());
    }
    let user_feasible: Vec<usize> = feasible
        .iter()
        .copied()
        .filter(|&q| q < responses.len() && responses[q].is_some() && !targets.contains(&q))
        .collect();
    let length = budget.min(user_feasible.len());
    let mut state = SessionState::new(prior);
    let emit = |t: usize, state: &SessionState<S>, f: &mut dyn FnMut(usize, &SessionState<S>)| {
        for &c in checkpoints {
            if c.min(length) == t {
                f(c, state);
            }
        }
    };
    emit(0, &state, &mut on_checkpoint);
    for t in 0..length {
        let x = select_next(&state, &user_feasible, policy, targets, tensor, kind, rng)?;
        let y = responses[x].expect("user-feasible questions are answered") as usize;
        state = state.update(x, y, tensor)?;
        emit(t + 1, &state, &mut on_checkpoint);
    }
    Ok(state)
}

/// A uniformly random ordering of the feasible questions; its length-`T`
/// prefix is the random-fixed question set for budget `T`.
pub fn random_fixed_order<R: Rng + ?Sized>(feasible: &[usize], rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = feasible.to_vec();
    order.sort_unstable();
    order.shuffle(rng);
    order
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<S> {
    pub mean: S,
    pub std_err: S,
}

/// Pool of simulated trajectories shared by every candidate evaluation
/// (common random numbers).
///
/// Sample `s` fixes a persona `θ_s ~ prior` and one uniform variate per
/// question; the simulated answer to question `q` is the inverse-CDF draw of
/// `μ[θ_s][q]` at that variate, so the answer to a question is the same no
/// matter which candidate set it is evaluated in.
pub struct CrnPool<'a, S> {
    tensor: &'a LikelihoodTensor<S>,
    questions: Vec<usize>,
    n_samples: usize,
    // n_samples × questions.len()
    answers: Vec<u8>,
    // n_samples × n_personas; log prior plus log-likelihood of committed answers
    log_weights: Vec<S>,
    committed: Vec<usize>,
}

impl<'a, S: Scalar> CrnPool<'a, S> {
    /// Draws the pool. Variates are consumed sample by sample: first the
    /// persona uniform, then one uniform per question in `questions` order.
    pub fn new<R: Rng + ?Sized>(
        prior: &PersonaPrior<S>,
        tensor: &'a LikelihoodTensor<S>,
        questions: &[usize],
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        if n_samples == 0 {
            return Err(PolicyError::ZeroMcSamples);
        }
        if prior.len() != tensor.n_personas() {
            return Err(ModelError::DimensionMismatch(format!(
                "prior has {} personas, tensor has {}",
                prior.len(),
                tensor.n_personas()
            ))
            .into());
        }
        if let Some(&q) = questions.iter().find(|&&q| q >= tensor.n_questions()) {
            return Err(ModelError::QuestionOutOfRange {
                question: q,
                n_questions: tensor.n_questions(),
            }
            .into());
        }
        let n = tensor.n_personas();
        let prior_f64: Vec<f64> = prior.weights().iter().map(|w| w.to_f64_lossy()).collect();
        let log_prior: Vec<S> = prior.weights().iter().map(|w| w.ln()).collect();
        let mut answers = Vec::with_capacity(n_samples * questions.len());
        let mut log_weights = Vec::with_capacity(n_samples * n);
        for _ in 0..n_samples {
            let persona = inverse_cdf(&prior_f64, rng.random::<f64>());
            for &q in questions {
                let row: Vec<f64> = tensor
                    .row(persona, q)
                    .iter()
                    .map(|p| p.to_f64_lossy())
                    .collect();
                answers.push(inverse_cdf(&row, rng.random::<f64>()) as u8);
            }
            log_weights.extend_from_slice(&log_prior);
        }
        Ok(Self {
            tensor,
            questions: questions.to_vec(),
            n_samples,
            answers,
            log_weights,
            committed: Vec::new(),
        })
    }

    pub fn committed(&self) -> &[usize] {
        &self.committed
    }

    fn column(&self, question: usize) -> Result<usize, PolicyError> {
        self.questions
            .iter()
            .position(|&q| q == question)
            .ok_or_else(|| PolicyError::InvalidList(format!("question {question} not in the pool")))
    }

    /// Estimates `E[U(targets | Y_{committed ∪ {candidate}})]`.
    pub fn estimate(
        &self,
        candidate: Option<usize>,
        targets: &[usize],
        kind: UncertaintyKind,
    ) -> Result<McEstimate<S>, PolicyError> {
        check_targets(targets, self.tensor)?;
        let column = candidate.map(|c| self.column(c)).transpose()?;
        let n = self.tensor.n_personas();
        let m = self.questions.len();
        let values: Vec<S> = (0..self.n_samples)
            .into_par_iter()
            .map_init(
                || {
                    (
                        vec![S::zero(); n],
                        vec![S::zero(); self.tensor.n_categories()],
                    )
                },
                |(lw, buf), s| {
                    lw.copy_from_slice(&self.log_weights[s * n..(s + 1) * n]);
                    if let (Some(col), Some(c)) = (column, candidate) {
                        let y = self.answers[s * m + col] as usize;
                        for (p, w) in lw.iter_mut().enumerate() {
                            *w += self.tensor.log_prob(p, c, y);
                        }
                    }
                    let lse = log_sum_exp(lw);
                    for w in lw.iter_mut() {
                        *w = (*w - lse).exp();
                    }
                    weights_target_uncertainty(lw, targets, self.tensor, kind, buf)
                },
            )
            .collect();
        Ok(mean_and_se(&values))
    }

    /// Adds `question` to the committed set.
    pub fn commit(&mut self, question: usize) -> Result<(), PolicyError> {
        if self.committed.contains(&question) {
            return Err(PolicyError::CandidateQueried(question));
        }
        let col = self.column(question)?;
        let n = self.tensor.n_personas();
        let m = self.questions.len();
        for s in 0..self.n_samples {
            let y = self.answers[s * m + col] as usize;
            for (p, w) in self.log_weights[s * n..(s + 1) * n].iter_mut().enumerate() {
                *w += self.tensor.log_prob(p, question, y);
            }
        }
        self.committed.push(question);
        Ok(())
    }
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last category with positive mass
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

fn mean_and_se<S: Scalar>(values: &[S]) -> McEstimate<S> {
    let n = S::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<S>() / n;
    let std_err = if values.len() > 1 {
        let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / (n - S::one());
        (var / n).sqrt()
    } else {
        S::zero()
    };
    McEstimate { mean, std_err }
}

/// Monte Carlo estimate of the expected posterior target uncertainty after
/// observing the answers to `questions`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_expected_uncertainty<S: Scalar, R: Rng + ?Sized>(
    questions: &[usize],
    targets: &[usize],
    prior: &PersonaPrior<S>,
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
    mc_samples: usize,
    rng: &mut R,
) -> Result<McEstimate<S>, PolicyError> {
    let mut pool = CrnPool::new(prior, tensor, questions, mc_samples, rng)?;
    for &q in questions {
        pool.commit(q)?;
    }
    pool.estimate(None, targets, kind)
}

/// Greedy forward selection of a fixed, user-independent question list.
#[allow(clippy::too_many_arguments)]
pub fn design_nonadaptive<S: Scalar, R: Rng + ?Sized>(
    budget: usize,
    feasible: &[usize],
    targets: &[usize],
    prior: &PersonaPrior<S>,
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
    mc_samples: usize,
    rng: &mut R,
) -> Result<Vec<usize>, PolicyError> {
    let mut candidates: Vec<usize> = feasible.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if let Some(&t) = candidates.iter().find(|q| targets.contains(q)) {
        return Err(PolicyError::CandidateIsTarget(t));
    }
    if budget > candidates.len() {
        return Err(PolicyError::BudgetTooLarge {
            budget,
            feasible: candidates.len(),
        });
    }
    let mut pool = CrnPool::new(prior, tensor, &candidates, mc_samples, rng)?;
    for _ in 0..budget {
        let mut best: Option<(usize, S)> = None;
        for &x in candidates.iter().filter(|x| !pool.committed().contains(x)) {
            let est = pool.estimate(Some(x), targets, kind)?.mean;
            if best.is_none_or(|(_, b)| est < b) {
                best = Some((x, est));
            }
        }
        let (x, _) = best.expect("budget <= |feasible|");
        pool.commit(x)?;
    }
    Ok(pool.committed().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{purpose, stream_rng};
    use crate::scoring::target_uncertainty;

    fn tensor(n: usize, m: usize, k: usize, rows: &[&[f64]]) -> LikelihoodTensor<f64> {
        assert_eq!(rows.len(), n * m);
        LikelihoodTensor::new(
            n,
            m,
            k,
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn uninformative_candidate_keeps_uncertainty() {
        // q0 identical across personas, q1 target
        let t = tensor(
            2,
            2,
            2,
            &[&[0.6, 0.4], &[0.9, 0.1], &[0.6, 0.4], &[0.2, 0.8]],
        );
        let s = SessionState::new(&PersonaPrior::new(vec![0.3, 0.7]).unwrap());
        let now = target_uncertainty(&s, &[1], &t, UncertaintyKind::ShannonEntropy).unwrap();
        let la = greedy_lookahead(&s, 0, &[1], &t, UncertaintyKind::ShannonEntropy).unwrap();
        assert!((la.expected_uncertainty - now).abs() < 1e-15);
    }

    #[test]
    fn revealing_candidate_zeroes_target_uncertainty() {
        let t = tensor(
            2,
            2,
            2,
            &[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]],
        );
        let s = SessionState::new(&PersonaPrior::uniform(2));
        let la = greedy_lookahead(&s, 0, &[1], &t, UncertaintyKind::ShannonEntropy).unwrap();
        assert_eq!(la.expected_uncertainty, 0.0);
    }

    #[test]
    fn lookahead_rejects_bad_candidates() {
        let t = tensor(
            2,
            2,
            2,
            &[&[0.5, 0.5], &[0.5, 0.5], &[0.1, 0.9], &[0.9, 0.1]],
        );
        let s = SessionState::new(&PersonaPrior::uniform(2));
        assert_eq!(
            greedy_lookahead(&s, 1, &[1], &t, UncertaintyKind::ShannonEntropy).unwrap_err(),
            PolicyError::CandidateIsTarget(1)
        );
        let s = s.update(0, 0, &t).unwrap();
        assert_eq!(
            greedy_lookahead(&s, 0, &[1], &t, UncertaintyKind::ShannonEntropy).unwrap_err(),
            PolicyError::CandidateQueried(0)
        );
    }

    #[test]
    fn argmin_prefers_lower_score_then_lower_index() {
        let scores = [
            LookaheadScore {
                question: 3,
                expected_uncertainty: 0.9,
            },
            LookaheadScore {
                question: 5,
                expected_uncertainty: 0.5,
            },
        ];
        assert_eq!(argmin_by_score(&scores).unwrap().question, 5);
        let tied = [
            LookaheadScore {
                question: 7,
                expected_uncertainty: 0.4,
            },
            LookaheadScore {
                question: 2,
                expected_uncertainty: 0.4,
            },
        ];
        assert_eq!(argmin_by_score(&tied).unwrap().question, 2);
    }

    #[test]
    fn greedy_ties_go_to_lowest_index() {
        // every candidate is uninformative
        let row: &[f64] = &[0.5, 0.5];
        let t = tensor(
            2,
            4,
            2,
            &[row, row, row, &[0.1, 0.9], row, row, row, &[0.8, 0.2]],
        );
        let s = SessionState::new(&PersonaPrior::uniform(2));
        let mut rng = stream_rng(1, purpose::RANDOM_POLICY, 0);
        let q = select_next(
            &s,
            &[2, 1, 0],
            &PolicyKind::Greedy,
            &[3],
            &t,
            UncertaintyKind::ShannonEntropy,
            &mut rng,
        )
        .unwrap();
        assert_eq!(q, 0);
    }

    #[test]
    fn random_policy_is_reproducible() {
        let row: &[f64] = &[0.5, 0.5];
        let t = tensor(1, 6, 2, &[row; 6]);
        let prior = PersonaPrior::uniform(1);
        let answers = vec![Some(0); 6];
        let run = |seed| {
            let mut rng = stream_rng(seed, purpose::RANDOM_POLICY, 0);
            run_session(
                &answers,
                5,
                &PolicyKind::Random,
                &[0, 1, 2, 3, 4],
                &[5],
                &prior,
                &t,
                UncertaintyKind::ShannonEntropy,
                &mut rng,
            )
            .unwrap()
            .queried()
            .to_vec()
        };
        assert_eq!(run(11), run(11));
        let mut sorted = run(11);
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn exhausted_feasible_set_is_an_error() {
        let t = tensor(1, 2, 2, &[&[0.5, 0.5], &[0.5, 0.5]]);
        let s = SessionState::new(&PersonaPrior::uniform(1))
            .update(0, 0, &t)
            .unwrap();
        let mut rng = stream_rng(0, 0, 0);
        let err = select_next(
            &s,
            &[0],
            &PolicyKind::Full,
            &[1],
            &t,
            UncertaintyKind::ShannonEntropy,
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(err, PolicyError::BudgetExceedsFeasible);
    }

    #[test]
    fn session_lengths_respect_budget_and_missingness() {
        let row: &[f64] = &[0.3, 0.7];
        let t = tensor(1, 9, 2, &[row; 9]);
        let prior = PersonaPrior::uniform(1);
        let feasible: Vec<usize> = (0..8).collect();
        let mut rng = stream_rng(0, 0, 0);
        let full: Vec<Option<u8>> = vec![Some(1); 9];
        let s = run_session(
            &full,
            0,
            &PolicyKind::Full,
            &feasible,
            &[8],
            &prior,
            &t,
            UncertaintyKind::ShannonEntropy,
            &mut rng,
        )
        .unwrap();
        assert!(s.is_empty());
        assert_eq!(s.posterior().weights(), prior.weights());
        let s = run_session(
            &full,
            100,
            &PolicyKind::Full,
            &feasible,
            &[8],
            &prior,
            &t,
            UncertaintyKind::ShannonEntropy,
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.queried(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        let half: Vec<Option<u8>> = (0..9).map(|q| (q % 2 == 0).then_some(1)).collect();
        let s = run_session(
            &half,
            100,
            &PolicyKind::Greedy,
            &feasible,
            &[8],
            &prior,
            &t,
            UncertaintyKind::ShannonEntropy,
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.queried().iter().all(|q| q % 2 == 0));
    }

    #[test]
    fn checkpoints_see_prefix_states() {
        let t = tensor(
            2,
            4,
            2,
            &[
                &[0.8, 0.2],
                &[0.3, 0.7],
                &[0.5, 0.5],
                &[0.9, 0.1],
                &[0.2, 0.8],
                &[0.6, 0.4],
                &[0.5, 0.5],
                &[0.1, 0.9],
            ],
        );
        let prior = PersonaPrior::uniform(2);
        let answers = vec![Some(0), Some(1), Some(0), Some(1)];
        let mut rng = stream_rng(0, 0, 0);
        let mut seen = Vec::new();
        run_session_with_checkpoints(
            &answers,
            10,
            &PolicyKind::Greedy,
            &[0, 1, 2],
            &[3],
            &prior,
            &t,
            UncertaintyKind::ShannonEntropy,
            &mut rng,
            &[0, 1, 2, 10],
            |c, s| seen.push((c, s.queried().to_vec())),
        )
        .unwrap();
        assert_eq!(seen.len(), 4);
        assert!(seen[0].1.is_empty());
        assert_eq!(seen[1].1.len(), 1);
        assert_eq!(&seen[2].1[..1], &seen[1].1[..]);
        assert_eq!(seen[3].1.len(), 3);
    }

    #[test]
    fn design_is_permutation_at_full_budget_and_index_ordered_for_one_persona() {
        let t = tensor(
            1,
            5,
            2,
            &[
                &[0.1, 0.9],
                &[0.4, 0.6],
                &[0.7, 0.3],
                &[0.2, 0.8],
                &[0.5, 0.5],
            ],
        );
        let prior = PersonaPrior::uniform(1);
        let mut rng = stream_rng(3, purpose::NONADAPTIVE_MC, 0);
        let d = design_nonadaptive(
            4,
            &[3, 1, 0, 2],
            &[4],
            &prior,
            &t,
            UncertaintyKind::ShannonEntropy,
            50,
            &mut rng,
        )
        .unwrap();
        assert_eq!(d, vec![0, 1, 2, 3]);
        let err = design_nonadaptive(
            1,
            &[0],
            &[4],
            &prior,
            &t,
            UncertaintyKind::ShannonEntropy,
            0,
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(err, PolicyError::ZeroMcSamples);
        assert!(matches!(
            design_nonadaptive(
                3,
                &[0, 1],
                &[4],
                &prior,
                &t,
                UncertaintyKind::ShannonEntropy,
                5,
                &mut rng
            ),
            Err(PolicyError::BudgetTooLarge { .. })
        ));
    }

    #[test]
    fn policy_list_validation() {
        assert!(PolicyKind::Nonadaptive(vec![0, 1])
            .validate(&[0, 1, 2])
            .is_ok());
        assert!(PolicyKind::Nonadaptive(vec![0, 0])
            .validate(&[0, 1])
            .is_err());
        assert!(PolicyKind::RandomFixed(vec![5]).validate(&[0, 1]).is_err());
    }
}
