//! Persona mixture model: likelihood tensor, prior, posterior and predictive.
//!
//! A user is modelled as one of `n` personas. Conditional on the persona,
//! answers to different questions are independent categorical draws with
//! parameters `μ[persona][question][·]`. All posterior arithmetic happens in
//! log space; weights are derived from the normalized log weights.

use thiserror::Error;

use crate::scalar::{log_sum_exp, Scalar};

/// Default lower bound applied to elicited probabilities.
pub const LIKELIHOOD_FLOOR: f64 = 1e-6;

/// Largest supported number of answer categories (answers are stored as `u8`).
pub const MAX_CATEGORIES: usize = u8::MAX as usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid likelihood tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("question {question} was already queried")]
    DuplicateQuestion { question: usize },
    #[error("question index {question} out of range (n_questions = {n_questions})")]
    QuestionOutOfRange { question: usize, n_questions: usize },
    #[error("answer {answer} out of range (n_categories = {n_categories})")]
    AnswerOutOfRange { answer: usize, n_categories: usize },
    #[error("posterior-collapse: every persona assigns zero probability to answer {answer} on question {question}")]
    PosteriorCollapse { question: usize, answer: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Dense `n_personas × n_questions × n_categories` array of categorical
/// response probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTensor<S> {
    n_personas: usize,
    n_questions: usize,
    n_categories: usize,
    probs: Vec<S>,
    log_probs: Vec<S>,
}

impl<S: Scalar> LikelihoodTensor<S> {
    /// Builds a tensor from row-major probabilities, validating every row.
    pub fn new(
        n_personas: usize,
        n_questions: usize,
        n_categories: usize,
        probs: Vec<S>,
    ) -> Result<Self, ModelError> {
        if n_personas == 0 || n_questions == 0 {
            return Err(ModelError::InvalidTensor(
                "need at least one persona and one question".into(),
            ));
        }
        if !(2..=MAX_CATEGORIES).contains(&n_categories) {
            return Err(ModelError::InvalidTensor(format!(
                "n_categories must be in 2..={MAX_CATEGORIES}, got {n_categories}"
            )));
        }
        let expected = n_personas * n_questions * n_categories;
        if probs.len() != expected {
            return Err(ModelError::InvalidTensor(format!(
                "expected {expected} probabilities, got {}",
                probs.len()
            )));
        }
        let tol = S::sum_tolerance();
        for (row_idx, row) in probs.chunks_exact(n_categories).enumerate() {
            let persona = row_idx / n_questions;
            let question = row_idx % n_questions;
            if let Some(bad) = row
                .iter()
                .find(|p| !p.is_finite() || **p < S::zero() || **p > S::one())
            {
                return Err(ModelError::InvalidTensor(format!(
                    "row (persona {persona}, question {question}) has entry {bad} outside [0, 1]"
                )));
            }
            let sum: S = row.iter().copied().sum();
            if (sum - S::one()).abs() > tol {
                return Err(ModelError::InvalidTensor(format!(
                    "row (persona {persona}, question {question}) sums to {sum}"
                )));
            }
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            n_personas,
            n_questions,
            n_categories,
            probs,
            log_probs,
        })
    }

    /// Like [`LikelihoodTensor::new`] but first clamps every row that has an
    /// entry below `floor` and renormalizes it. Rows already above the floor
    /// are left bit-for-bit untouched.
    pub fn with_floor(
        n_personas: usize,
        n_questions: usize,
        n_categories: usize,
        mut probs: Vec<S>,
        floor: S,
    ) -> Result<Self, ModelError> {
        if n_categories >= 1 {
            for row in probs.chunks_exact_mut(n_categories) {
                apply_floor(row, floor);
            }
        }
        Self::new(n_personas, n_questions, n_categories, probs)
    }

    /// Returns a copy with the floor applied (see [`LikelihoodTensor::with_floor`]).
    pub fn floored(&self, floor: S) -> Self {
        let mut probs = self.probs.clone();
        for row in probs.chunks_exact_mut(self.n_categories) {
            apply_floor(row, floor);
        }
        Self::new(self.n_personas, self.n_questions, self.n_categories, probs)
            .expect("flooring preserves validity")
    }

    pub fn n_personas(&self) -> usize {
        self.n_personas
    }

    pub fn n_questions(&self) -> usize {
        self.n_questions
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    /// Row-major probabilities.
    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    /// Natural logs of [`LikelihoodTensor::probs`].
    pub fn log_probs(&self) -> &[S] {
        &self.log_probs
    }

    #[inline]
    fn offset(&self, persona: usize, question: usize) -> usize {
        (persona * self.n_questions + question) * self.n_categories
    }

    #[inline]
    pub fn row(&self, persona: usize, question: usize) -> &[S] {
        let o = self.offset(persona, question);
        &self.probs[o..o + self.n_categories]
    }

    #[inline]
    pub fn log_row(&self, persona: usize, question: usize) -> &[S] {
        let o = self.offset(persona, question);
        &self.log_probs[o..o + self.n_categories]
    }

    #[inline]
    pub fn prob(&self, persona: usize, question: usize, category: usize) -> S {
        self.probs[self.offset(persona, question) + category]
    }

    #[inline]
    pub fn log_prob(&self, persona: usize, question: usize, category: usize) -> S {
        self.log_probs[self.offset(persona, question) + category]
    }

    /// Converts to another precision, re-validating the result.
    pub fn cast<T: Scalar>(&self) -> Result<LikelihoodTensor<T>, ModelError> {
        let probs = self
            .probs
            .iter()
            .map(|p| T::lit(p.to_f64_lossy()))
            .collect();
        LikelihoodTensor::new(self.n_personas, self.n_questions, self.n_categories, probs)
    }

    /// Keeps only the listed personas, in the given order.
    pub fn select_personas(&self, personas: &[usize]) -> Result<Self, ModelError> {
        let mut probs = Vec::with_capacity(personas.len() * self.n_questions * self.n_categories);
        for &p in personas {
            if p >= self.n_personas {
                return Err(ModelError::DimensionMismatch(format!(
                    "persona {p} out of range ({} personas)",
                    self.n_personas
                )));
            }
            let start = self.offset(p, 0);
            probs.extend_from_slice(
                &self.probs[start..start + self.n_questions * self.n_categories],
            );
        }
        Self::new(personas.len(), self.n_questions, self.n_categories, probs)
    }

    fn check_question(&self, question: usize) -> Result<(), ModelError> {
        if question >= self.n_questions {
            return Err(ModelError::QuestionOutOfRange {
                question,
                n_questions: self.n_questions,
            });
        }
        Ok(())
    }

    fn check_answer(&self, answer: usize) -> Result<(), ModelError> {
        if answer >= self.n_categories {
            return Err(ModelError::AnswerOutOfRange {
                answer,
                n_categories: self.n_categories,
            });
        }
        Ok(())
    }
}

fn apply_floor<S: Scalar>(row: &mut [S], floor: S) {
    let mut pinned = vec![false; row.len()];
    loop {
        let mut changed = false;
        for (p, pin) in row.iter_mut().zip(pinned.iter_mut()) {
            if !*pin && !(*p >= floor) {
                *p = floor;
                *pin = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
        let n_pinned = pinned.iter().filter(|&&b| b).count();
        let free_mass = S::one() - floor * S::from_usize_lossy(n_pinned);
        let free_sum: S = row
            .iter()
            .zip(&pinned)
            .filter(|(_, &pin)| !pin)
            .map(|(&p, _)| p)
            .sum();
        if !(free_sum > S::zero()) || !(free_mass > S::zero()) {
            let u = S::one() / S::from_usize_lossy(row.len());
            row.iter_mut().for_each(|p| *p = u);
            return;
        }
        for (p, &pin) in row.iter_mut().zip(&pinned) {
            if !pin {
                *p = *p * free_mass / free_sum;
            }
        }
    }
}

/// Prior probability of each persona.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaPrior<S> {
    weights: Vec<S>,
}

impl<S: Scalar> PersonaPrior<S> {
    pub fn new(weights: Vec<S>) -> Result<Self, ModelError> {
        if weights.is_empty() {
            return Err(ModelError::InvalidPrior("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < S::zero()) {
            return Err(ModelError::InvalidPrior(format!("invalid weight {w}")));
        }
        let sum: S = weights.iter().copied().sum();
        if (sum - S::one()).abs() > S::sum_tolerance() {
            return Err(ModelError::InvalidPrior(format!("weights sum to {sum}")));
        }
        Ok(Self { weights })
    }

    /// Normalizes arbitrary non-negative masses into a prior.
    pub fn from_masses(masses: Vec<S>) -> Result<Self, ModelError> {
        let sum: S = masses.iter().copied().sum();
        if !(sum > S::zero()) || !sum.is_finite() {
            return Err(ModelError::InvalidPrior(format!("total mass {sum}")));
        }
        Self::new(masses.into_iter().map(|m| m / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform prior over zero personas");
        let w = S::one() / S::from_usize_lossy(n);
        Self {
            weights: vec![w; n],
        }
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn cast<T: Scalar>(&self) -> Result<PersonaPrior<T>, ModelError> {
        PersonaPrior::from_masses(
            self.weights
                .iter()
                .map(|w| T::lit(w.to_f64_lossy()))
                .collect(),
        )
    }
}

/// Posterior over personas, kept as normalized log weights plus the derived
/// linear weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaPosterior<S> {
    log_weights: Vec<S>,
    weights: Vec<S>,
}

impl<S: Scalar> PersonaPosterior<S> {
    pub fn from_prior(prior: &PersonaPrior<S>) -> Self {
        Self {
            log_weights: prior.weights.iter().map(|w| w.ln()).collect(),
            weights: prior.weights.clone(),
        }
    }

    /// Normalizes unnormalized log weights. `None` when the total mass is zero.
    pub fn from_unnormalized_log(mut log_weights: Vec<S>) -> Option<Self> {
        let lse = log_sum_exp(&log_weights);
        if !lse.is_finite() {
            return None;
        }
        for lw in log_weights.iter_mut() {
            *lw -= lse;
        }
        let weights = log_weights.iter().map(|lw| lw.exp()).collect();
        Some(Self {
            log_weights,
            weights,
        })
    }

    pub fn log_weights(&self) -> &[S] {
        &self.log_weights
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Indices of the `k` heaviest personas, heaviest first (ties by index).
    pub fn top(&self, k: usize) -> Vec<(usize, S)> {
        let mut idx: Vec<usize> = (0..self.weights.len()).collect();
        idx.sort_by(|&a, &b| {
            self.weights[b]
                .partial_cmp(&self.weights[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx.into_iter()
            .take(k)
            .map(|i| (i, self.weights[i]))
            .collect()
    }
}

/// One user's interaction history and the resulting posterior. Immutable:
/// updates return a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState<S> {
    queried: Vec<usize>,
    answers: Vec<u8>,
    posterior: PersonaPosterior<S>,
}

impl<S: Scalar> SessionState<S> {
    pub fn new(prior: &PersonaPrior<S>) -> Self {
        Self {
            queried: Vec::new(),
            answers: Vec::new(),
            posterior: PersonaPosterior::from_prior(prior),
        }
    }

    /// Folds all observations into the prior in one batched update.
    pub fn from_observations(
        prior: &PersonaPrior<S>,
        observations: &[(usize, usize)],
        tensor: &LikelihoodTensor<S>,
    ) -> Result<Self, ModelError> {
        check_prior_len(prior, tensor)?;
        let mut queried = Vec::with_capacity(observations.len());
        let mut answers = Vec::with_capacity(observations.len());
        let mut log_w: Vec<S> = prior.weights.iter().map(|w| w.ln()).collect();
        for &(q, a) in observations {
            tensor.check_question(q)?;
            tensor.check_answer(a)?;
            if queried.contains(&q) {
                return Err(ModelError::DuplicateQuestion { question: q });
            }
            queried.push(q);
            answers.push(a as u8);
            for (p, lw) in log_w.iter_mut().enumerate() {
                *lw += tensor.log_prob(p, q, a);
            }
        }
        if observations.is_empty() {
            return Ok(Self::new(prior));
        }
        let posterior = PersonaPosterior::from_unnormalized_log(log_w).ok_or_else(|| {
            let (question, answer) = observations.last().copied().unwrap_or((0, 0));
            ModelError::PosteriorCollapse { question, answer }
        })?;
        Ok(Self {
            queried,
            answers,
            posterior,
        })
    }

    pub fn queried(&self) -> &[usize] {
        &self.queried
    }

    /// Answers aligned with [`SessionState::queried`].
    pub fn answers(&self) -> &[u8] {
        &self.answers
    }

    pub fn posterior(&self) -> &PersonaPosterior<S> {
        &self.posterior
    }

    pub fn len(&self) -> usize {
        self.queried.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queried.is_empty()
    }

    pub fn has_queried(&self, question: usize) -> bool {
        self.queried.contains(&question)
    }

    /// Observes `answer` to `question` and returns the updated state.
    pub fn update(
        &self,
        question: usize,
        answer: usize,
        tensor: &LikelihoodTensor<S>,
    ) -> Result<Self, ModelError> {
        posterior_update(self, question, answer, tensor)
    }

    pub fn predictive(
        &self,
        question: usize,
        tensor: &LikelihoodTensor<S>,
    ) -> Result<Vec<S>, ModelError> {
        posterior_predictive(self, question, tensor)
    }
}

fn check_prior_len<S: Scalar>(
    prior: &PersonaPrior<S>,
    tensor: &LikelihoodTensor<S>,
) -> Result<(), ModelError> {
    if prior.len() != tensor.n_personas() {
        return Err(ModelError::DimensionMismatch(format!(
            "prior has {} personas, tensor has {}",
            prior.len(),
            tensor.n_personas()
        )));
    }
    Ok(())
}

/// Bayes update of the persona posterior after observing one answer.
pub fn posterior_update<S: Scalar>(
    state: &SessionState<S>,
    question: usize,
    answer: usize,
    tensor: &LikelihoodTensor<S>,
) -> Result<SessionState<S>, ModelError> {
    tensor.check_question(question)?;
    tensor.check_answer(answer)?;
    if state.posterior.len() != tensor.n_personas() {
        return Err(ModelError::DimensionMismatch(format!(
            "posterior has {} personas, tensor has {}",
            state.posterior.len(),
            tensor.n_personas()
        )));
    }
    if state.has_queried(question) {
        return Err(ModelError::DuplicateQuestion { question });
    }
    let log_w: Vec<S> = state
        .posterior
        .log_weights
        .iter()
        .enumerate()
        .map(|(p, &lw)| lw + tensor.log_prob(p, question, answer))
        .collect();
    let posterior = PersonaPosterior::from_unnormalized_log(log_w)
        .ok_or(ModelError::PosteriorCollapse { question, answer })?;
    let mut queried = state.queried.clone();
    queried.push(question);
    let mut answers = state.answers.clone();
    answers.push(answer as u8);
    Ok(SessionState {
        queried,
        answers,
        posterior,
    })
}

/// Posterior predictive distribution of the answer to `question`.
pub fn posterior_predictive<S: Scalar>(
    state: &SessionState<S>,
    question: usize,
    tensor: &LikelihoodTensor<S>,
) -> Result<Vec<S>, ModelError> {
    tensor.check_question(question)?;
    Ok(mixture_predictive(
        state.posterior.weights(),
        question,
        tensor,
    ))
}

/// `Σ_p weights[p] · μ[p][question][·]` for any weight vector.
pub fn mixture_predictive<S: Scalar>(
    weights: &[S],
    question: usize,
    tensor: &LikelihoodTensor<S>,
) -> Vec<S> {
    let mut out = vec![S::zero(); tensor.n_categories()];
    mixture_predictive_into(weights, question, tensor, &mut out);
    out
}

pub(crate) fn mixture_predictive_into<S: Scalar>(
    weights: &[S],
    question: usize,
    tensor: &LikelihoodTensor<S>,
    out: &mut [S],
) {
    out.iter_mut().for_each(|v| *v = S::zero());
    for (p, &w) in weights.iter().enumerate() {
        if w == S::zero() {
            continue;
        }
        for (o, &mu) in out.iter_mut().zip(tensor.row(p, question)) {
            *o += w * mu;
        }
    }
}

/// Log marginal likelihood of a (possibly partially missing) answer vector.
/// Missing entries are skipped; an all-missing vector scores 0.
pub fn log_marginal_likelihood<S: Scalar>(
    responses: &[Option<u8>],
    prior: &PersonaPrior<S>,
    tensor: &LikelihoodTensor<S>,
) -> Result<S, ModelError> {
    check_prior_len(prior, tensor)?;
    let lls = persona_log_likelihoods(responses, tensor)?;
    if responses.iter().all(Option::is_none) {
        return Ok(S::zero());
    }
    let joint: Vec<S> = lls
        .iter()
        .zip(prior.weights())
        .map(|(&ll, &w)| ll + w.ln())
        .collect();
    Ok(log_sum_exp(&joint))
}

/// `log p(responses | persona)` for every persona, skipping missing entries.
pub fn persona_log_likelihoods<S: Scalar>(
    responses: &[Option<u8>],
    tensor: &LikelihoodTensor<S>,
) -> Result<Vec<S>, ModelError> {
    if responses.len() != tensor.n_questions() {
        return Err(ModelError::DimensionMismatch(format!(
            "response vector has {} entries, tensor has {} questions",
            responses.len(),
            tensor.n_questions()
        )));
    }
    for a in responses.iter().flatten() {
        tensor.check_answer(*a as usize)?;
    }
    Ok((0..tensor.n_personas())
        .map(|p| {
            responses
                .iter()
                .enumerate()
                .filter_map(|(q, a)| a.map(|a| tensor.log_prob(p, q, a as usize)))
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_one(rows: [[f64; 2]; 2]) -> LikelihoodTensor<f64> {
        LikelihoodTensor::new(2, 1, 2, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn bayes_rule_hand_example() {
        let t = two_by_one([[0.8, 0.2], [0.2, 0.8]]);
        let s = SessionState::new(&PersonaPrior::uniform(2))
            .update(0, 0, &t)
            .unwrap();
        assert!((s.posterior().weights()[0] - 0.8).abs() < 1e-15);
        assert!((s.posterior().weights()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn no_observations_is_prior() {
        let prior = PersonaPrior::new(vec![0.25, 0.75]).unwrap();
        let s = SessionState::new(&prior);
        assert_eq!(s.posterior().weights(), prior.weights());
        let t = two_by_one([[0.8, 0.2], [0.2, 0.8]]);
        let batch = SessionState::from_observations(&prior, &[], &t).unwrap();
        assert_eq!(batch.posterior().weights(), prior.weights());
    }

    #[test]
    fn constant_likelihood_leaves_posterior_unchanged() {
        let t = two_by_one([[0.3, 0.7], [0.3, 0.7]]);
        let prior = PersonaPrior::new(vec![0.1, 0.9]).unwrap();
        let s = SessionState::new(&prior).update(0, 1, &t).unwrap();
        for (a, b) in s.posterior().weights().iter().zip(prior.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_question_rejected() {
        let t = two_by_one([[0.8, 0.2], [0.2, 0.8]]);
        let s = SessionState::new(&PersonaPrior::uniform(2))
            .update(0, 0, &t)
            .unwrap();
        assert_eq!(
            s.update(0, 1, &t).unwrap_err(),
            ModelError::DuplicateQuestion { question: 0 }
        );
    }

    #[test]
    fn zero_mass_is_posterior_collapse() {
        let t = two_by_one([[1.0, 0.0], [1.0, 0.0]]);
        let err = SessionState::new(&PersonaPrior::uniform(2))
            .update(0, 1, &t)
            .unwrap_err();
        assert_eq!(
            err,
            ModelError::PosteriorCollapse {
                question: 0,
                answer: 1
            }
        );
    }

    #[test]
    fn predictive_hand_example() {
        let t = two_by_one([[0.9, 0.1], [0.1, 0.9]]);
        let prior = PersonaPrior::new(vec![0.8, 0.2]).unwrap();
        let p = SessionState::new(&prior).predictive(0, &t).unwrap();
        assert!((p[0] - 0.74).abs() < 1e-15);
        assert!((p[1] - 0.26).abs() < 1e-15);
    }

    #[test]
    fn degenerate_posterior_predicts_persona_row() {
        let t = two_by_one([[0.9, 0.1], [0.35, 0.65]]);
        let prior = PersonaPrior::new(vec![0.0, 1.0]).unwrap();
        let p = SessionState::new(&prior).predictive(0, &t).unwrap();
        assert_eq!(p, vec![0.35, 0.65]);
    }

    #[test]
    fn marginal_likelihood_examples() {
        let single = LikelihoodTensor::new(1, 1, 2, vec![0.7, 0.3]).unwrap();
        let ll = log_marginal_likelihood(&[Some(0)], &PersonaPrior::uniform(1), &single).unwrap();
        assert!((ll - 0.7f64.ln()).abs() < 1e-15);

        let t = two_by_one([[0.8, 0.2], [0.2, 0.8]]);
        let ll = log_marginal_likelihood(&[Some(0)], &PersonaPrior::uniform(2), &t).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);

        let ll = log_marginal_likelihood(&[None], &PersonaPrior::uniform(2), &t).unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn tensor_validation() {
        assert!(LikelihoodTensor::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(LikelihoodTensor::new(1, 1, 2, vec![-0.1, 1.1]).is_err());
        assert!(LikelihoodTensor::new(1, 1, 1, vec![1.0]).is_err());
        assert!(LikelihoodTensor::<f64>::new(0, 1, 2, vec![]).is_err());
        assert!(LikelihoodTensor::<f64>::new(1, 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn floor_only_touches_rows_below_it() {
        let t = LikelihoodTensor::with_floor(1, 2, 2, vec![0.3, 0.7, 1.0, 0.0], 1e-6).unwrap();
        assert_eq!(t.row(0, 0), &[0.3, 0.7]);
        let row = t.row(0, 1);
        assert!(row[1] > 0.0 && row[1] < 1.1e-6);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t.floored(1e-6), t);
    }

    #[test]
    fn f32_tensor_works() {
        let t = LikelihoodTensor::<f32>::new(2, 1, 2, vec![0.8, 0.2, 0.2, 0.8]).unwrap();
        let s = SessionState::new(&PersonaPrior::uniform(2))
            .update(0, 0, &t)
            .unwrap();
        assert!((s.posterior().weights()[0] - 0.8).abs() < 1e-6);
    }
}
