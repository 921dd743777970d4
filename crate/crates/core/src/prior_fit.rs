//! Empirical-Bayes fit of the persona prior by expectation–maximization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, ResponseDataset};
use crate::parallel::chunked_reduce;
use crate::persona::{persona_log_likelihoods, LikelihoodTensor, ModelError, PersonaPrior};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorFitError {
    #[error("no training user has an observed answer")]
    NoObservations,
    #[error("user {user} has zero marginal likelihood under every persona")]
    ZeroLikelihood { user: String },
    #[error("invalid EM configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Mixes each M-step result with this much uniform mass.
    pub weight_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-4,
            weight_floor: 0.0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), PriorFitError> {
        if self.max_iters == 0 {
            return Err(PriorFitError::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(PriorFitError::Config(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(0.0..1.0).contains(&self.weight_floor) {
            return Err(PriorFitError::Config(format!(
                "weight_floor must lie in [0, 1), got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }
}

/// Total log marginal likelihood of the training users after each M-step.
///
/// `log_likelihoods[0]` is the value at the uniform initialization and
/// `log_likelihoods[i]` the value after `i` M-steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EmTrace {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().expect("trace is never empty")
    }

    /// True when no step decreased the objective by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.log_likelihoods
            .windows(2)
            .all(|w| w[1] >= w[0] - slack)
    }
}

struct EStep<S> {
    log_likelihood: S,
    responsibility_sums: Vec<S>,
}

/// Fits the prior weights by EM, starting from the uniform prior.
///
/// Users without any observed answer carry no information about the prior
/// and are skipped.
pub fn fit_prior_em<S: Scalar>(
    training: &ResponseDataset,
    tensor: &LikelihoodTensor<S>,
    config: &EmConfig,
) -> Result<(PersonaPrior<S>, EmTrace), PriorFitError> {
    config.validate()?;
    training.check_against(tensor)?;
    let n = tensor.n_personas();

    // The tensor is fixed, so each user's per-persona log-likelihood is
    // computed once.
    let mut user_ll: Vec<Vec<S>> = Vec::new();
    let mut user_names: Vec<&str> = Vec::new();
    for u in 0..training.n_users() {
        let row = training.user(u);
        if row.iter().any(Option::is_some) {
            user_ll.push(persona_log_likelihoods(row, tensor)?);
            user_names.push(&training.user_ids()[u]);
        }
    }
    if user_ll.is_empty() {
        return Err(PriorFitError::NoObservations);
    }

    let e_step = |prior: &PersonaPrior<S>| -> Result<EStep<S>, PriorFitError> {
        let log_prior: Vec<S> = prior.weights().iter().map(|w| w.ln()).collect();
        let (ll, sums, bad) = chunked_reduce(
            user_ll.len(),
            64,
            || (S::zero(), vec![S::zero(); n], None::<usize>),
            |(ll, sums, bad), j| {
                let lw: Vec<S> = log_prior
                    .iter()
                    .zip(&user_ll[j])
                    .map(|(&a, &b)| a + b)
                    .collect();
                let lse = log_sum_exp(&lw);
                if !lse.is_finite() {
                    bad.get_or_insert(j);
                    return;
                }
                *ll += lse;
                for (s, w) in sums.iter_mut().zip(&lw) {
                    *s += (*w - lse).exp();
                }
            },
            |(ll, sums, bad), (pll, psums, pbad)| {
                *ll += pll;
                for (s, p) in sums.iter_mut().zip(psums) {
                    *s += p;
                }
                if bad.is_none() {
                    *bad = pbad;
                }
            },
        );
        if let Some(j) = bad {
            return Err(PriorFitError::ZeroLikelihood {
                user: user_names[j].to_string(),
            });
        }
        Ok(EStep {
            log_likelihood: ll,
            responsibility_sums: sums,
        })
    };

    let n_users = S::from_usize_lossy(user_ll.len());
    let floor = S::lit(config.weight_floor);
    let uniform_share = floor / S::from_usize_lossy(n);
    let mut prior = PersonaPrior::uniform(n);
    let mut step = e_step(&prior)?;
    let mut trace = EmTrace {
        log_likelihoods: vec![step.log_likelihood.to_f64_lossy()],
        iterations: 0,
        converged: false,
    };
    for it in 1..=config.max_iters {
        let masses: Vec<S> = step
            .responsibility_sums
            .iter()
            .map(|&s| (S::one() - floor) * s / n_users + uniform_share)
            .collect();
        prior = PersonaPrior::from_masses(masses)?;
        let prev = step.log_likelihood;
        step = e_step(&prior)?;
        trace
            .log_likelihoods
            .push(step.log_likelihood.to_f64_lossy());
        trace.iterations = it;
        if (step.log_likelihood - prev).abs().to_f64_lossy() < config.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((prior, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_users;

    fn two_persona_tensor(m: usize) -> LikelihoodTensor<f64> {
        let mut probs = Vec::new();
        for _ in 0..m {
            probs.extend([0.95, 0.05]);
        }
        for _ in 0..m {
            probs.extend([0.05, 0.95]);
        }
        LikelihoodTensor::new(2, m, 2, probs).unwrap()
    }

    #[test]
    fn single_persona_is_trivial() {
        let t = LikelihoodTensor::new(1, 1, 2, vec![0.3, 0.7]).unwrap();
        let d = ResponseDataset::new(vec!["a".into()], vec!["q".into()], 2, vec![Some(1)]).unwrap();
        let (prior, trace) = fit_prior_em(&d, &t, &EmConfig::default()).unwrap();
        assert_eq!(prior.weights(), &[1.0]);
        assert!(trace.converged);
        assert_eq!(trace.iterations, 1);
    }

    #[test]
    fn concentrates_on_generating_persona() {
        let t = two_persona_tensor(10);
        let users =
            generate_synthetic_users(&PersonaPrior::new(vec![1.0, 0.0]).unwrap(), &t, 200, 2)
                .unwrap();
        let (prior, trace) = fit_prior_em(&users.dataset, &t, &EmConfig::default()).unwrap();
        assert!(prior.weights()[0] > 0.95, "{:?}", prior.weights());
        assert!(trace.is_monotone(1e-9));
    }

    #[test]
    fn all_missing_users_are_skipped_and_empty_is_rejected() {
        let t = two_persona_tensor(2);
        let d = ResponseDataset::new(
            vec!["a".into()],
            vec!["q0".into(), "q1".into()],
            2,
            vec![None, None],
        )
        .unwrap();
        assert_eq!(
            fit_prior_em(&d, &t, &EmConfig::default()).unwrap_err(),
            PriorFitError::NoObservations
        );
        let d = ResponseDataset::new(
            vec!["a".into(), "b".into()],
            vec!["q0".into(), "q1".into()],
            2,
            vec![None, None, Some(0), None],
        )
        .unwrap();
        let (prior, _) = fit_prior_em(&d, &t, &EmConfig::default()).unwrap();
        assert!(prior.weights()[0] > 0.9);
    }

    #[test]
    fn weight_floor_keeps_every_persona_alive() {
        let t = two_persona_tensor(10);
        let users =
            generate_synthetic_users(&PersonaPrior::new(vec![1.0, 0.0]).unwrap(), &t, 100, 5)
                .unwrap();
        let config = EmConfig {
            weight_floor: 0.1,
            ..EmConfig::default()
        };
        let (prior, _) = fit_prior_em(&users.dataset, &t, &config).unwrap();
        assert!(prior.weights()[1] >= 0.05 - 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(EmConfig {
            max_iters: 0,
            ..EmConfig::default()
        }
        .validate()
        .is_err());
        assert!(EmConfig {
            tol: 0.0,
            ..EmConfig::default()
        }
        .validate()
        .is_err());
        assert!(EmConfig {
            weight_floor: 1.0,
            ..EmConfig::default()
        }
        .validate()
        .is_err());
    }
}
