//! Polytomous item response models.
//!
//! Every model is evaluated through a linear predictor `z = aᵀθ` and a vector
//! of intercepts `c`. For the unidimensional models the intercepts are
//! `c_k = a·b_k` (GRM) or `c_s = a·d_s` (GPCM); the multidimensional variants
//! store them directly. Category probabilities depend on `(z, c)` only, so
//! `∂P_k/∂θ = (dP_k/dz)·a`.

use serde::{Deserialize, Serialize};

use super::CatError;
use crate::scalar::Scalar;

/// Probability floor used inside log-likelihoods.
pub const PROB_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrtModelKind {
    Grm,
    Gpcm,
    Mgrm,
    Mgpcm,
}

impl IrtModelKind {
    /// Cumulative-logit (graded) family rather than adjacent-category.
    pub fn is_graded(self) -> bool {
        matches!(self, IrtModelKind::Grm | IrtModelKind::Mgrm)
    }

    pub fn is_multidimensional(self) -> bool {
        matches!(self, IrtModelKind::Mgrm | IrtModelKind::Mgpcm)
    }

    pub fn default_dims(self) -> usize {
        if self.is_multidimensional() {
            3
        } else {
            1
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IrtModelKind::Grm => "grm",
            IrtModelKind::Gpcm => "gpcm",
            IrtModelKind::Mgrm => "mgrm",
            IrtModelKind::Mgpcm => "mgpcm",
        }
    }
}

impl std::str::FromStr for IrtModelKind {
    type Err = CatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "grm" => Ok(IrtModelKind::Grm),
            "gpcm" => Ok(IrtModelKind::Gpcm),
            "mgrm" => Ok(IrtModelKind::Mgrm),
            "mgpcm" => Ok(IrtModelKind::Mgpcm),
            other => Err(CatError::Config(format!("unknown IRT model {other:?}"))),
        }
    }
}

/// Parameters of one item: discrimination(s) `a` (length D) and `K - 1`
/// thresholds (`b` for graded models, step parameters `d` otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtItem<S> {
    pub a: Vec<S>,
    pub thresholds: Vec<S>,
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> IrtItem<S> {
    pub fn n_categories(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn dims(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self, kind: IrtModelKind) -> Result<(), CatError> {
        if self.a.is_empty() || self.thresholds.is_empty() {
            return Err(CatError::InvalidBank(
                "item needs a discrimination and at least one threshold".into(),
            ));
        }
        if !kind.is_multidimensional() && self.a.len() != 1 {
            return Err(CatError::InvalidBank(format!(
                "{} items have one discrimination, got {}",
                kind.name(),
                self.a.len()
            )));
        }
        if self
            .a
            .iter()
            .chain(&self.thresholds)
            .any(|v| !v.is_finite())
        {
            return Err(CatError::InvalidBank(
                "item parameters must be finite".into(),
            ));
        }
        if !kind.is_multidimensional() && !(self.a[0] > S::zero()) {
            return Err(CatError::InvalidBank(format!(
                "discrimination must be positive, got {}",
                self.a[0]
            )));
        }
        if kind.is_graded() && self.thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(CatError::InvalidBank(
                "graded thresholds must be nondecreasing".into(),
            ));
        }
        Ok(())
    }

    /// Intercepts `c` of the `(z, c)` form.
    pub fn intercepts(&self, kind: IrtModelKind) -> Vec<S> {
        if kind.is_multidimensional() {
            self.thresholds.clone()
        } else {
            self.thresholds.iter().map(|&t| self.a[0] * t).collect()
        }
    }

    pub fn linear_predictor(&self, theta: &[S]) -> S {
        self.a.iter().zip(theta).map(|(&a, &t)| a * t).sum()
    }

    /// Category probabilities at `theta`.
    pub fn category_probs(&self, kind: IrtModelKind, theta: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.n_categories()];
        probs_from_linear(
            kind,
            self.linear_predictor(theta),
            &self.intercepts(kind),
            &mut out,
        );
        out
    }

    /// Analytic gradients `∂P_k/∂θ`, one row of length D per category.
    pub fn category_gradients(&self, kind: IrtModelKind, theta: &[S]) -> Vec<Vec<S>> {
        let k = self.n_categories();
        let mut p = vec![S::zero(); k];
        let mut dp = vec![S::zero(); k];
        derivs_from_linear(
            kind,
            self.linear_predictor(theta),
            &self.intercepts(kind),
            &mut p,
            &mut dp,
        );
        dp.iter()
            .map(|&d| self.a.iter().map(|&a| d * a).collect())
            .collect()
    }

    /// Fisher information at `theta` as a row-major D × D matrix.
    pub fn fisher_information(&self, kind: IrtModelKind, theta: &[S]) -> Vec<S> {
        let j = self.information_kernel(kind, self.linear_predictor(theta));
        let d = self.dims();
        let mut out = vec![S::zero(); d * d];
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = j * self.a[r] * self.a[c];
            }
        }
        out
    }

    /// Trace of [`IrtItem::fisher_information`].
    pub fn fisher_trace(&self, kind: IrtModelKind, theta: &[S]) -> S {
        let norm2: S = self.a.iter().map(|&a| a * a).sum();
        self.information_kernel(kind, self.linear_predictor(theta)) * norm2
    }

    /// `Σ_k (dP_k/dz)² / P_k`.
    fn information_kernel(&self, kind: IrtModelKind, z: S) -> S {
        let k = self.n_categories();
        let mut p = vec![S::zero(); k];
        let mut dp = vec![S::zero(); k];
        derivs_from_linear(kind, z, &self.intercepts(kind), &mut p, &mut dp);
        p.iter()
            .zip(&dp)
            .filter(|(&pk, _)| pk > S::min_positive_value())
            .map(|(&pk, &d)| d * d / pk)
            .sum()
    }
}

/// Category probabilities from the linear predictor and intercepts.
pub(crate) fn probs_from_linear<S: Scalar>(kind: IrtModelKind, z: S, c: &[S], out: &mut [S]) {
    let k = out.len();
    if kind.is_graded() {
        let mut upper = S::one();
        for cat in 0..k {
            let lower = if cat + 1 < k {
                sigmoid(z - c[cat])
            } else {
                S::zero()
            };
            out[cat] = (upper - lower).max(S::zero());
            upper = lower;
        }
    } else {
        let mut psi = S::zero();
        out[0] = S::zero();
        for cat in 1..k {
            psi += z - c[cat - 1];
            out[cat] = psi;
        }
        let max = out.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
    }
}

/// Probabilities and their derivatives with respect to `z`.
pub(crate) fn derivs_from_linear<S: Scalar>(
    kind: IrtModelKind,
    z: S,
    c: &[S],
    p: &mut [S],
    dp: &mut [S],
) {
    let k = p.len();
    probs_from_linear(kind, z, c, p);
    if kind.is_graded() {
        let slope = |cat: usize| -> S {
            if cat == 0 || cat >= k {
                S::zero()
            } else {
                let f = sigmoid(z - c[cat - 1]);
                f * (S::one() - f)
            }
        };
        for cat in 0..k {
            dp[cat] = slope(cat) - slope(cat + 1);
        }
    } else {
        let mean: S = p
            .iter()
            .enumerate()
            .map(|(i, &pi)| S::from_usize_lossy(i) * pi)
            .sum();
        for cat in 0..k {
            dp[cat] = p[cat] * (S::from_usize_lossy(cat) - mean);
        }
    }
}

/// Log-likelihood contribution `Σ_k r_k log max(P_k, floor)` at one grid
/// point, accumulating its derivatives with respect to `z` and each
/// intercept. Floored categories contribute no gradient.
pub(crate) fn weighted_loglik_grad<S: Scalar>(
    kind: IrtModelKind,
    z: S,
    c: &[S],
    counts: &[S],
    probs: &mut [S],
    grad_z: &mut S,
    grad_c: &mut [S],
) -> S {
    let k = counts.len();
    let floor = S::lit(PROB_FLOOR);
    probs_from_linear(kind, z, c, probs);
    let mut q = S::zero();
    if kind.is_graded() {
        let slope = |cat: usize| -> S {
            if cat == 0 || cat >= k {
                S::zero()
            } else {
                let f = sigmoid(z - c[cat - 1]);
                f * (S::one() - f)
            }
        };
        for cat in 0..k {
            let r = counts[cat];
            if r == S::zero() {
                continue;
            }
            if probs[cat] < floor {
                q += r * floor.ln();
                continue;
            }
            q += r * probs[cat].ln();
            let w = r / probs[cat];
            let lo = slope(cat);
            let hi = slope(cat + 1);
            *grad_z += w * (lo - hi);
            if cat >= 1 {
                grad_c[cat - 1] -= w * lo;
            }
            if cat + 1 < k {
                grad_c[cat] += w * hi;
            }
        }
    } else {
        let mean: S = probs
            .iter()
            .enumerate()
            .map(|(i, &pi)| S::from_usize_lossy(i) * pi)
            .sum();
        // tail[s] = P(Y >= s)
        let mut tail = vec![S::zero(); k + 1];
        for cat in (0..k).rev() {
            tail[cat] = tail[cat + 1] + probs[cat];
        }
        for cat in 0..k {
            let r = counts[cat];
            if r == S::zero() {
                continue;
            }
            if probs[cat] < floor {
                q += r * floor.ln();
                continue;
            }
            q += r * probs[cat].ln();
            *grad_z += r * (S::from_usize_lossy(cat) - mean);
            for s in 1..k {
                let indicator = if s <= cat { S::one() } else { S::zero() };
                grad_c[s - 1] += r * (tail[s] - indicator);
            }
        }
    }
    q
}

/// A calibrated set of items sharing one model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtItemBank<S> {
    pub kind: IrtModelKind,
    pub dims: usize,
    pub n_categories: usize,
    pub items: Vec<IrtItem<S>>,
}

impl<S: Scalar> IrtItemBank<S> {
    pub fn new(
        kind: IrtModelKind,
        dims: usize,
        n_categories: usize,
        items: Vec<IrtItem<S>>,
    ) -> Result<Self, CatError> {
        let bank = Self {
            kind,
            dims,
            n_categories,
            items,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<(), CatError> {
        if self.dims == 0 {
            return Err(CatError::InvalidBank(
                "latent dimension must be at least 1".into(),
            ));
        }
        if !self.kind.is_multidimensional() && self.dims != 1 {
            return Err(CatError::InvalidBank(format!(
                "{} is unidimensional",
                self.kind.name()
            )));
        }
        if self.n_categories < 2 {
            return Err(CatError::InvalidBank("need at least two categories".into()));
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.dims() != self.dims || item.n_categories() != self.n_categories {
                return Err(CatError::InvalidBank(format!(
                    "item {i} has {} dims and {} categories, bank has {} and {}",
                    item.dims(),
                    item.n_categories(),
                    self.dims,
                    self.n_categories
                )));
            }
            item.validate(self.kind)
                .map_err(|e| CatError::InvalidBank(format!("item {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn cast<T: Scalar>(&self) -> Result<IrtItemBank<T>, CatError> {
        let conv = |v: &[S]| v.iter().map(|x| T::lit(x.to_f64_lossy())).collect();
        let items = self
            .items
            .iter()
            .map(|it| IrtItem {
                a: conv(&it.a),
                thresholds: conv(&it.thresholds),
            })
            .collect();
        IrtItemBank::new(self.kind, self.dims, self.n_categories, items)
    }
}
