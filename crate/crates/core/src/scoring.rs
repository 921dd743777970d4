//! Uncertainty functionals and proper scoring rules.
//!
//! Entropy is measured in nats. Ordinal categories are coded `0..K`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{mixture_predictive_into, LikelihoodTensor, ModelError, SessionState};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("outcome {outcome} out of range for {n_categories} categories")]
    OutcomeOutOfRange { outcome: usize, n_categories: usize },
    #[error("outcome {outcome} has zero predicted probability; log score is infinite")]
    ZeroProbability { outcome: usize },
    #[error("target set is empty")]
    EmptyTargets,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Uncertainty functional `U` applied to each target marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    #[default]
    #[serde(alias = "entropy")]
    ShannonEntropy,
    #[serde(alias = "gini")]
    GiniImpurity,
}

impl UncertaintyKind {
    pub fn apply<S: Scalar>(self, p: &[S]) -> S {
        match self {
            UncertaintyKind::ShannonEntropy => entropy(p),
            UncertaintyKind::GiniImpurity => gini(p),
        }
    }
}

/// Per-(user, target) evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub user_id: String,
    pub question_id: String,
    pub log_loss: f64,
    pub brier: f64,
    pub ordinal_mse: f64,
}

impl ScoreRecord {
    pub fn score<S: Scalar>(
        user_id: impl Into<String>,
        question_id: impl Into<String>,
        p: &[S],
        outcome: usize,
    ) -> Result<Self, ScoringError> {
        Ok(Self {
            user_id: user_id.into(),
            question_id: question_id.into(),
            log_loss: log_score(p, outcome)?.to_f64_lossy(),
            brier: brier_score(p, outcome)?.to_f64_lossy(),
            ordinal_mse: ordinal_mse(p, outcome)?.to_f64_lossy(),
        })
    }
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy<S: Scalar>(p: &[S]) -> S {
    p.iter()
        .filter(|&&pk| pk > S::zero())
        .map(|&pk| -pk * pk.ln())
        .sum()
}

/// Gini impurity `1 - Σ p_k²`.
pub fn gini<S: Scalar>(p: &[S]) -> S {
    S::one() - p.iter().map(|&pk| pk * pk).sum::<S>()
}

fn check_outcome<S>(p: &[S], outcome: usize) -> Result<(), ScoringError> {
    if outcome >= p.len() {
        return Err(ScoringError::OutcomeOutOfRange {
            outcome,
            n_categories: p.len(),
        });
    }
    Ok(())
}

/// Negative log probability of the realized outcome.
pub fn log_score<S: Scalar>(p: &[S], outcome: usize) -> Result<S, ScoringError> {
    check_outcome(p, outcome)?;
    let po = p[outcome];
    if !(po > S::zero()) {
        return Err(ScoringError::ZeroProbability { outcome });
    }
    Ok(-po.ln())
}

/// Multi-category Brier score `Σ_k (p_k - 1{k = outcome})²`, in `[0, 2]`.
pub fn brier_score<S: Scalar>(p: &[S], outcome: usize) -> Result<S, ScoringError> {
    check_outcome(p, outcome)?;
    Ok(p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let d = if k == outcome { pk - S::one() } else { pk };
            d * d
        })
        .sum())
}

/// Squared error between the predictive mean category and the outcome.
pub fn ordinal_mse<S: Scalar>(p: &[S], outcome: usize) -> Result<S, ScoringError> {
    check_outcome(p, outcome)?;
    let mean: S = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| S::from_usize_lossy(k) * pk)
        .sum();
    let d = mean - S::from_usize_lossy(outcome);
    Ok(d * d)
}

/// Sum over targets of the uncertainty of each posterior predictive marginal.
pub fn target_uncertainty<S: Scalar>(
    state: &SessionState<S>,
    targets: &[usize],
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
) -> Result<S, ScoringError> {
    if targets.is_empty() {
        return Err(ScoringError::EmptyTargets);
    }
    for &t in targets {
        if t >= tensor.n_questions() {
            return Err(ModelError::QuestionOutOfRange {
                question: t,
                n_questions: tensor.n_questions(),
            }
            .into());
        }
    }
    let mut buf = vec![S::zero(); tensor.n_categories()];
    Ok(weights_target_uncertainty(
        state.posterior().weights(),
        targets,
        tensor,
        kind,
        &mut buf,
    ))
}

/// Target uncertainty for an arbitrary (normalized) persona weight vector.
pub(crate) fn weights_target_uncertainty<S: Scalar>(
    weights: &[S],
    targets: &[usize],
    tensor: &LikelihoodTensor<S>,
    kind: UncertaintyKind,
    buf: &mut [S],
) -> S {
    let mut total = S::zero();
    for &t in targets {
        mixture_predictive_into(weights, t, tensor, buf);
        total += kind.apply(buf);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::PersonaPrior;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25f64; 4]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[0.0f64, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.5f64, 0.5, 0.0, 0.0]) - LN2).abs() < 1e-15);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[1.0f64, 0.0]), 0.0);
        assert!((gini(&[0.25f64; 4]) - 0.75).abs() < 1e-15);
        assert!((gini(&[0.5f64, 0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_score_examples() {
        assert_eq!(log_score(&[0.0f64, 1.0], 1).unwrap(), 0.0);
        assert!((log_score(&[0.25f64; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((log_score(&[0.74f64, 0.26], 0).unwrap() - 0.301105).abs() < 1e-6);
        assert_eq!(
            log_score(&[1.0f64, 0.0], 1).unwrap_err(),
            ScoringError::ZeroProbability { outcome: 1 }
        );
        assert!(log_score(&[1.0f64, 0.0], 2).is_err());
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_score(&[0.0f64, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((brier_score(&[0.25f64; 4], 3).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(brier_score(&[1.0f64, 0.0], 1).unwrap(), 2.0);
    }

    #[test]
    fn ordinal_mse_examples() {
        assert!((ordinal_mse(&[0.25f64; 4], 3).unwrap() - 2.25).abs() < 1e-15);
        assert_eq!(ordinal_mse(&[0.0f64, 0.0, 1.0, 0.0], 2).unwrap(), 0.0);
        assert_eq!(ordinal_mse(&[0.0f64, 0.0, 0.0, 1.0], 0).unwrap(), 9.0);
    }

    #[test]
    fn target_uncertainty_examples() {
        // persona 0 is certain about both questions, persona 1 opposite
        let t =
            LikelihoodTensor::new(2, 2, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let degenerate = SessionState::new(&PersonaPrior::new(vec![1.0, 0.0]).unwrap());
        let u = target_uncertainty(&degenerate, &[0], &t, UncertaintyKind::ShannonEntropy).unwrap();
        assert_eq!(u, 0.0);

        let uniform = SessionState::new(&PersonaPrior::uniform(2));
        let one = target_uncertainty(&uniform, &[1], &t, UncertaintyKind::ShannonEntropy).unwrap();
        assert!((one - LN2).abs() < 1e-15);
        let two =
            target_uncertainty(&uniform, &[1, 1], &t, UncertaintyKind::ShannonEntropy).unwrap();
        assert_eq!(two, 2.0 * one);

        assert_eq!(
            target_uncertainty(&uniform, &[], &t, UncertaintyKind::GiniImpurity).unwrap_err(),
            ScoringError::EmptyTargets
        );
    }

    #[test]
    fn kind_parses_short_names() {
        let k: UncertaintyKind = serde_json::from_str("\"entropy\"").unwrap();
        assert_eq!(k, UncertaintyKind::ShannonEntropy);
        let k: UncertaintyKind = serde_json::from_str("\"gini_impurity\"").unwrap();
        assert_eq!(k, UncertaintyKind::GiniImpurity);
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("positive mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.into_iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn duality_with_scoring_rules(p in simplex(5)) {
            // U(p) = -E_{Z~p}[S(p, Z)] with S the positively oriented score
            let mut exp_log = 0.0;
            let mut exp_brier = 0.0;
            for (z, &pz) in p.iter().enumerate() {
                if pz > 0.0 {
                    exp_log += pz * -log_score(&p, z).unwrap();
                }
                exp_brier += pz * -brier_score(&p, z).unwrap();
            }
            prop_assert!((entropy(&p) - -exp_log).abs() < 1e-12);
            prop_assert!((gini(&p) + exp_brier).abs() < 1e-12);
        }

        #[test]
        fn concavity(p in simplex(4), q in simplex(4), lambda in 0.01f64..0.99) {
            let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            for kind in [UncertaintyKind::ShannonEntropy, UncertaintyKind::GiniImpurity] {
                let lhs = kind.apply(&mix);
                let rhs = lambda * kind.apply(&p) + (1.0 - lambda) * kind.apply(&q);
                prop_assert!(lhs >= rhs - 1e-12);
            }
        }

        #[test]
        fn permutation_invariance(p in simplex(4), rot in 0usize..4) {
            let mut r = p.clone();
            r.rotate_left(rot);
            r.swap(0, 3);
            prop_assert!((entropy(&p) - entropy(&r)).abs() < 1e-12);
            prop_assert!((gini(&p) - gini(&r)).abs() < 1e-12);
        }

        #[test]
        fn ranges(p in simplex(4), z in 0usize..4) {
            let h = entropy(&p);
            prop_assert!(h >= 0.0 && h <= 4f64.ln() + 1e-12);
            let g = gini(&p);
            prop_assert!(g >= -1e-15 && g <= 0.75 + 1e-12);
            let b = brier_score(&p, z).unwrap();
            prop_assert!((0.0..=2.0).contains(&b));
        }
    }
}
