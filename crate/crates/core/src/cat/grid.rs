//! Quadrature grid over the latent trait.

use serde::{Deserialize, Serialize};

use super::CatError;
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub theta_max: f64,
    /// Points per dimension; `None` picks 41 for one dimension and 9 otherwise.
    pub points_per_dim: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            theta_max: 4.0,
            points_per_dim: None,
        }
    }
}

impl GridConfig {
    pub fn points_for(&self, dims: usize) -> usize {
        self.points_per_dim
            .unwrap_or(if dims == 1 { 41 } else { 9 })
    }
}

/// Cartesian grid on `[-θmax, θmax]^D` with standard-normal prior weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitGrid<S> {
    dims: usize,
    points: Vec<S>,
    weights: Vec<S>,
    log_weights: Vec<S>,
}

impl<S: Scalar> TraitGrid<S> {
    pub fn new(dims: usize, config: &GridConfig) -> Result<Self, CatError> {
        let g = config.points_for(dims);
        if dims == 0 || g == 0 {
            return Err(CatError::InvalidGrid(
                "grid needs at least one dimension and one point".into(),
            ));
        }
        if !(config.theta_max > 0.0 && config.theta_max.is_finite()) {
            return Err(CatError::InvalidGrid(format!(
                "theta_max must be positive, got {}",
                config.theta_max
            )));
        }
        let total = g
            .checked_pow(dims as u32)
            .filter(|&t| t <= 10_000_000)
            .ok_or_else(|| CatError::InvalidGrid(format!("{g}^{dims} grid points is too many")))?;
        let axis: Vec<f64> = if g == 1 {
            vec![0.0]
        } else {
            (0..g)
                .map(|i| -config.theta_max + 2.0 * config.theta_max * i as f64 / (g - 1) as f64)
                .collect()
        };
        let mut points = Vec::with_capacity(total * dims);
        let mut log_density = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rest = flat;
            let mut coords = vec![0.0; dims];
            for d in (0..dims).rev() {
                coords[d] = axis[rest % g];
                rest /= g;
            }
            log_density.push(S::lit(-0.5 * coords.iter().map(|x| x * x).sum::<f64>()));
            points.extend(coords.into_iter().map(S::lit));
        }
        let lse = log_sum_exp(&log_density);
        let log_weights: Vec<S> = log_density.iter().map(|&l| l - lse).collect();
        let weights = log_weights.iter().map(|l| l.exp()).collect();
        Ok(Self {
            dims,
            points,
            weights,
            log_weights,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, g: usize) -> &[S] {
        &self.points[g * self.dims..(g + 1) * self.dims]
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[S] {
        &self.log_weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let g1 = TraitGrid::<f64>::new(1, &GridConfig::default()).unwrap();
        assert_eq!(g1.len(), 41);
        assert_eq!(g1.point(0), &[-4.0]);
        assert_eq!(g1.point(40), &[4.0]);
        assert!((g1.point(20)[0]).abs() < 1e-15);
        let g3 = TraitGrid::<f64>::new(3, &GridConfig::default()).unwrap();
        assert_eq!(g3.len(), 729);
    }

    #[test]
    fn weights_are_normalized_and_symmetric() {
        let g = TraitGrid::<f64>::new(
            2,
            &GridConfig {
                theta_max: 3.0,
                points_per_dim: Some(7),
            },
        )
        .unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let n = g.len();
        for i in 0..n {
            assert!((g.weights()[i] - g.weights()[n - 1 - i]).abs() < 1e-15);
            let a = g.point(i);
            let b = g.point(n - 1 - i);
            assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TraitGrid::<f64>::new(0, &GridConfig::default()).is_err());
        assert!(TraitGrid::<f64>::new(
            1,
            &GridConfig {
                theta_max: -1.0,
                points_per_dim: None
            }
        )
        .is_err());
    }
}
