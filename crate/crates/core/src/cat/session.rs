//! Sequential grid-posterior sessions and item selection.

use serde::{Deserialize, Serialize};

use super::grid::TraitGrid;
use super::model::{probs_from_linear, IrtItemBank, PROB_FLOOR};
use super::CatError;
use crate::scalar::{log_sum_exp, Scalar};

/// Item selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatCriterion {
    /// Maximum Fisher information (trace in several dimensions) at the
    /// posterior mean.
    Mfi,
    /// Minimum expected posterior variance.
    Mepv,
    /// Minimum expected trace of the posterior covariance.
    AOpt,
}

impl CatCriterion {
    pub fn default_for(dims: usize) -> Self {
        if dims == 1 {
            CatCriterion::Mepv
        } else {
            CatCriterion::AOpt
        }
    }
}

/// A calibrated bank together with its grid and precomputed category
/// probabilities at every grid point.
#[derive(Debug, Clone)]
pub struct CatModel<S> {
    bank: IrtItemBank<S>,
    grid: TraitGrid<S>,
    // items × G × K
    probs: Vec<S>,
    log_probs: Vec<S>,
}

impl<S: Scalar> CatModel<S> {
    pub fn new(bank: IrtItemBank<S>, grid: TraitGrid<S>) -> Result<Self, CatError> {
        bank.validate()?;
        if bank.dims != grid.dims() {
            return Err(CatError::DimensionMismatch(format!(
                "bank has {} dimensions, grid has {}",
                bank.dims,
                grid.dims()
            )));
        }
        let k = bank.n_categories;
        let n_grid = grid.len();
        let floor = S::lit(PROB_FLOOR);
        let mut probs = vec![S::zero(); bank.len() * n_grid * k];
        for (x, item) in bank.items.iter().enumerate() {
            let c = item.intercepts(bank.kind);
            for g in 0..n_grid {
                let z = item.linear_predictor(grid.point(g));
                let start = (x * n_grid + g) * k;
                probs_from_linear(bank.kind, z, &c, &mut probs[start..start + k]);
            }
        }
        let log_probs = probs.iter().map(|p| p.max(floor).ln()).collect();
        Ok(Self {
            bank,
            grid,
            probs,
            log_probs,
        })
    }

    pub fn bank(&self) -> &IrtItemBank<S> {
        &self.bank
    }

    pub fn grid(&self) -> &TraitGrid<S> {
        &self.grid
    }

    fn table(&self, item: usize, g: usize) -> &[S] {
        let k = self.bank.n_categories;
        let start = (item * self.grid.len() + g) * k;
        &self.probs[start..start + k]
    }

    fn check_item(&self, item: usize) -> Result<(), CatError> {
        if item >= self.bank.len() {
            return Err(CatError::ItemOutOfRange {
                item,
                n_items: self.bank.len(),
            });
        }
        Ok(())
    }

    /// Trace of the covariance of `weights` over the grid.
    fn trace_cov(&self, weights: &[S]) -> S {
        let d = self.grid.dims();
        let mut mean = vec![S::zero(); d];
        let mut second = vec![S::zero(); d];
        for (g, &w) in weights.iter().enumerate() {
            for (i, &t) in self.grid.point(g).iter().enumerate() {
                mean[i] += w * t;
                second[i] += w * t * t;
            }
        }
        mean.iter()
            .zip(&second)
            .map(|(&m, &s)| (s - m * m).max(S::zero()))
            .sum()
    }
}

/// Posterior over grid points for one respondent.
#[derive(Debug, Clone, PartialEq)]
pub struct CatSession<S> {
    log_weights: Vec<S>,
    weights: Vec<S>,
    administered: Vec<usize>,
}

impl<S: Scalar> CatSession<S> {
    pub fn new(model: &CatModel<S>) -> Self {
        Self {
            log_weights: model.grid.log_weights().to_vec(),
            weights: model.grid.weights().to_vec(),
            administered: Vec::new(),
        }
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn administered(&self) -> &[usize] {
        &self.administered
    }

    /// Multiplies in the likelihood of `response` to `item` and renormalizes.
    pub fn update(
        &self,
        model: &CatModel<S>,
        item: usize,
        response: usize,
    ) -> Result<Self, CatError> {
        model.check_item(item)?;
        let k = model.bank.n_categories;
        if response >= k {
            return Err(CatError::ResponseOutOfRange {
                response,
                n_categories: k,
            });
        }
        if self.administered.contains(&item) {
            return Err(CatError::AlreadyAdministered(item));
        }
        let n_grid = model.grid.len();
        let mut log_weights: Vec<S> = (0..n_grid)
            .map(|g| self.log_weights[g] + model.log_probs[(item * n_grid + g) * k + response])
            .collect();
        let lse = log_sum_exp(&log_weights);
        for l in log_weights.iter_mut() {
            *l -= lse;
        }
        let weights = log_weights.iter().map(|l| l.exp()).collect();
        let mut administered = self.administered.clone();
        administered.push(item);
        Ok(Self {
            log_weights,
            weights,
            administered,
        })
    }

    pub fn posterior_mean(&self, model: &CatModel<S>) -> Vec<S> {
        let d = model.grid.dims();
        let mut mean = vec![S::zero(); d];
        for (g, &w) in self.weights.iter().enumerate() {
            for (m, &t) in mean.iter_mut().zip(model.grid.point(g)) {
                *m += w * t;
            }
        }
        mean
    }

    /// Trace of the posterior covariance (the variance in one dimension).
    pub fn posterior_trace(&self, model: &CatModel<S>) -> S {
        model.trace_cov(&self.weights)
    }

    /// Posterior predictive distribution of `item`.
    pub fn predict(&self, model: &CatModel<S>, item: usize) -> Result<Vec<S>, CatError> {
        model.check_item(item)?;
        let mut out = vec![S::zero(); model.bank.n_categories];
        for (g, &w) in self.weights.iter().enumerate() {
            for (o, &p) in out.iter_mut().zip(model.table(item, g)) {
                *o += w * p;
            }
        }
        let sum: S = out.iter().copied().sum();
        for o in out.iter_mut() {
            *o /= sum;
        }
        Ok(out)
    }

    /// `Σ_k P(Y = k | data) · tr Cov(θ | data, Y = k)`.
    pub fn expected_posterior_trace(
        &self,
        model: &CatModel<S>,
        item: usize,
    ) -> Result<S, CatError> {
        model.check_item(item)?;
        let k = model.bank.n_categories;
        let mut hypothetical = vec![S::zero(); self.weights.len()];
        let mut total = S::zero();
        for cat in 0..k {
            let mut p_k = S::zero();
            for (g, (h, &w)) in hypothetical.iter_mut().zip(&self.weights).enumerate() {
                *h = w * model.table(item, g)[cat];
                p_k += *h;
            }
            if !(p_k > S::zero()) {
                continue;
            }
            for h in hypothetical.iter_mut() {
                *h /= p_k;
            }
            total += p_k * model.trace_cov(&hypothetical);
        }
        Ok(total)
    }

    /// Fisher information trace of `item` at the posterior mean.
    pub fn information_at_mean(&self, model: &CatModel<S>, item: usize) -> Result<S, CatError> {
        model.check_item(item)?;
        let mean = self.posterior_mean(model);
        Ok(model.bank.items[item].fisher_trace(model.bank.kind, &mean))
    }

    /// Picks the next item among `remaining`; ties go to the lowest index.
    pub fn select(
        &self,
        model: &CatModel<S>,
        remaining: &[usize],
        criterion: CatCriterion,
    ) -> Result<usize, CatError> {
        let mut sorted: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|x| !self.administered.contains(x))
            .collect();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() {
            return Err(CatError::NoRemainingItems);
        }
        let mut best: Option<(usize, S)> = None;
        for &x in &sorted {
            let score = match criterion {
                CatCriterion::Mfi => -self.information_at_mean(model, x)?,
                CatCriterion::Mepv | CatCriterion::AOpt => {
                    self.expected_posterior_trace(model, x)?
                }
            };
            if best.is_none_or(|(_, b)| score < b) {
                best = Some((x, score));
            }
        }
        Ok(best.expect("non-empty").0)
    }
}
