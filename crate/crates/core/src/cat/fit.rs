//! Marginal maximum likelihood calibration of item banks by grid EM.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{GridConfig, TraitGrid};
use super::model::{
    probs_from_linear, weighted_loglik_grad, IrtItem, IrtItemBank, IrtModelKind, PROB_FLOOR,
};
use super::optim::minimize_box;
use super::CatError;
use crate::dataset::ResponseDataset;
use crate::parallel::chunked_reduce;
use crate::rng::{purpose, stream_rng};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrtEmConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Iteration cap of the per-item optimizer in each M-step.
    pub max_optim_iters: usize,
    /// Seeds the initial jitter of multidimensional discriminations.
    pub seed: u64,
}

impl Default for IrtEmConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-3,
            max_optim_iters: 100,
            seed: 0,
        }
    }
}

/// Marginal log-likelihood after each EM iteration; entry 0 is the value at
/// the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtFitTrace {
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl IrtFitTrace {
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.log_likelihoods
            .windows(2)
            .all(|w| w[1] >= w[0] - slack)
    }
}

// Box bounds of the unconstrained parameterization.
const LOG_A_BOUNDS: (f64, f64) = (-4.6, 3.0);
const A_BOUNDS: (f64, f64) = (-10.0, 10.0);
const LOCATION_BOUNDS: (f64, f64) = (-15.0, 15.0);
const LOG_GAP_BOUNDS: (f64, f64) = (-12.0, 3.0);

/// Optimizer coordinates of an item:
/// * discrimination: `log a` (unidimensional) or the raw `a` vector;
/// * graded thresholds: `b_1` then `log(b_k − b_{k−1})`;
/// * step parameters: raw `d`.
struct Layout {
    kind: IrtModelKind,
    dims: usize,
    n_thresholds: usize,
}

impl Layout {
    fn n_a(&self) -> usize {
        if self.kind.is_multidimensional() {
            self.dims
        } else {
            1
        }
    }

    fn len(&self) -> usize {
        self.n_a() + self.n_thresholds
    }

    fn bounds<S: Scalar>(&self) -> (Vec<S>, Vec<S>) {
        let mut lo = Vec::with_capacity(self.len());
        let mut hi = Vec::with_capacity(self.len());
        let a = if self.kind.is_multidimensional() {
            A_BOUNDS
        } else {
            LOG_A_BOUNDS
        };
        for _ in 0..self.n_a() {
            lo.push(S::lit(a.0));
            hi.push(S::lit(a.1));
        }
        for j in 0..self.n_thresholds {
            let (l, h) = if self.kind.is_graded() && j > 0 {
                LOG_GAP_BOUNDS
            } else {
                LOCATION_BOUNDS
            };
            lo.push(S::lit(l));
            hi.push(S::lit(h));
        }
        (lo, hi)
    }

    fn pack<S: Scalar>(&self, item: &IrtItem<S>) -> Vec<S> {
        let mut phi = Vec::with_capacity(self.len());
        if self.kind.is_multidimensional() {
            phi.extend_from_slice(&item.a);
        } else {
            phi.push(item.a[0].ln());
        }
        if self.kind.is_graded() {
            phi.push(item.thresholds[0]);
            for w in item.thresholds.windows(2) {
                let gap = w[1] - w[0];
                phi.push(if gap > S::zero() {
                    gap.ln()
                } else {
                    S::lit(LOG_GAP_BOUNDS.0)
                });
            }
        } else {
            phi.extend_from_slice(&item.thresholds);
        }
        phi
    }

    fn unpack<S: Scalar>(&self, phi: &[S]) -> IrtItem<S> {
        let n_a = self.n_a();
        let a = if self.kind.is_multidimensional() {
            phi[..n_a].to_vec()
        } else {
            vec![phi[0].exp()]
        };
        let t = &phi[n_a..];
        let thresholds = if self.kind.is_graded() {
            let mut out = Vec::with_capacity(t.len());
            let mut acc = t[0];
            out.push(acc);
            for &lg in &t[1..] {
                acc += lg.exp();
                out.push(acc);
            }
            out
        } else {
            t.to_vec()
        };
        IrtItem { a, thresholds }
    }

    /// Negative expected complete-data log-likelihood of one item and its
    /// gradient in optimizer coordinates. `counts` is `G × K`.
    fn objective<S: Scalar>(
        &self,
        phi: &[S],
        grid: &TraitGrid<S>,
        counts: &[S],
        grad: &mut [S],
    ) -> S {
        let k = self.n_thresholds + 1;
        let item = self.unpack(phi);
        let c = item.intercepts(self.kind);
        let mut probs = vec![S::zero(); k];
        let mut grad_c = vec![S::zero(); self.n_thresholds];
        let mut grad_a = vec![S::zero(); self.dims];
        let mut q = S::zero();
        for g in 0..grid.len() {
            let r = &counts[g * k..(g + 1) * k];
            if r.iter().all(|&v| v == S::zero()) {
                continue;
            }
            let theta = grid.point(g);
            let z = item.linear_predictor(theta);
            let mut gz = S::zero();
            q += weighted_loglik_grad(self.kind, z, &c, r, &mut probs, &mut gz, &mut grad_c);
            for (ga, &t) in grad_a.iter_mut().zip(theta) {
                *ga += gz * t;
            }
        }
        // chain rule from (a, c) to the item parameters
        let n_a = self.n_a();
        let mut grad_t: Vec<S> = vec![S::zero(); self.n_thresholds];
        if self.kind.is_multidimensional() {
            grad[..n_a].copy_from_slice(&grad_a);
            grad_t.copy_from_slice(&grad_c);
        } else {
            let a = item.a[0];
            let da = grad_a[0]
                + grad_c
                    .iter()
                    .zip(&item.thresholds)
                    .map(|(&gc, &t)| gc * t)
                    .sum::<S>();
            grad[0] = da * a;
            for (gt, &gc) in grad_t.iter_mut().zip(&grad_c) {
                *gt = gc * a;
            }
        }
        if self.kind.is_graded() {
            // suffix[j] = Σ_{i ≥ j} ∂Q/∂t_i
            let mut suffix = vec![S::zero(); self.n_thresholds + 1];
            for j in (0..self.n_thresholds).rev() {
                suffix[j] = suffix[j + 1] + grad_t[j];
            }
            grad[n_a] = suffix[0];
            for j in 1..self.n_thresholds {
                grad[n_a + j] = phi[n_a + j].exp() * suffix[j];
            }
        } else {
            grad[n_a..].copy_from_slice(&grad_t);
        }
        for v in grad.iter_mut() {
            *v = -*v;
        }
        -q
    }
}

fn initial_items<S: Scalar>(dims: usize, n_items: usize, k: usize, seed: u64) -> Vec<IrtItem<S>> {
    let n_thresholds = k - 1;
    let base: Vec<f64> = if n_thresholds == 1 {
        vec![0.0]
    } else {
        (0..n_thresholds)
            .map(|j| -1.0 + 2.0 * j as f64 / (n_thresholds - 1) as f64)
            .collect()
    };
    let mut rng = stream_rng(seed, purpose::CAT_INIT, 0);
    (0..n_items)
        .map(|_| {
            let a: Vec<S> = if dims == 1 {
                vec![S::one()]
            } else {
                // identical starting discriminations would keep every item
                // on the same direction, so they are jittered
                let scale = 1.0 / (dims as f64).sqrt();
                (0..dims)
                    .map(|_| S::lit(scale * (1.0 + 0.2 * (rng.random::<f64>() - 0.5))))
                    .collect()
            };
            let thresholds = base.iter().map(|&b| S::lit(b)).collect();
            IrtItem { a, thresholds }
        })
        .collect()
}

struct EStep<S> {
    log_likelihood: S,
    /// items × G × K expected counts
    counts: Vec<S>,
}

fn e_step<S: Scalar>(
    bank: &IrtItemBank<S>,
    grid: &TraitGrid<S>,
    observations: &[Vec<(usize, usize)>],
) -> EStep<S> {
    let k = bank.n_categories;
    let n_grid = grid.len();
    let floor = S::lit(PROB_FLOOR);
    let mut log_table = vec![S::zero(); bank.len() * n_grid * k];
    log_table
        .par_chunks_mut(n_grid * k)
        .zip(&bank.items)
        .for_each(|(table, item)| {
            let c = item.intercepts(bank.kind);
            for g in 0..n_grid {
                let z = item.linear_predictor(grid.point(g));
                let row = &mut table[g * k..(g + 1) * k];
                probs_from_linear(bank.kind, z, &c, row);
                for p in row.iter_mut() {
                    *p = p.max(floor).ln();
                }
            }
        });
    let size = bank.len() * n_grid * k;
    let (log_likelihood, counts) = chunked_reduce(
        observations.len(),
        256,
        || (S::zero(), vec![S::zero(); size]),
        |(ll, counts), u| {
            let obs = &observations[u];
            let mut lw = grid.log_weights().to_vec();
            for &(x, y) in obs {
                let base = x * n_grid * k;
                for (g, w) in lw.iter_mut().enumerate() {
                    *w += log_table[base + g * k + y];
                }
            }
            let lse = log_sum_exp(&lw);
            *ll += lse;
            for w in lw.iter_mut() {
                *w = (*w - lse).exp();
            }
            for &(x, y) in obs {
                let base = x * n_grid * k;
                for (g, &w) in lw.iter().enumerate() {
                    counts[base + g * k + y] += w;
                }
            }
        },
        |(ll, counts), (pll, pcounts)| {
            *ll += pll;
            for (c, p) in counts.iter_mut().zip(pcounts) {
                *c += p;
            }
        },
    );
    EStep {
        log_likelihood,
        counts,
    }
}

/// Calibrates an item bank for every question of `training` by marginal
/// maximum likelihood with a fixed quadrature grid.
///
/// Items without any observed answer keep their starting parameters.
pub fn fit_irt_em<S: Scalar>(
    training: &ResponseDataset,
    kind: IrtModelKind,
    dims: usize,
    grid_config: &GridConfig,
    config: &IrtEmConfig,
) -> Result<(IrtItemBank<S>, TraitGrid<S>, IrtFitTrace), CatError> {
    if config.max_iters == 0 || !(config.tol > 0.0) {
        return Err(CatError::Config(
            "EM needs max_iters >= 1 and tol > 0".into(),
        ));
    }
    if !kind.is_multidimensional() && dims != 1 {
        return Err(CatError::Config(format!(
            "{} is unidimensional",
            kind.name()
        )));
    }
    let observations: Vec<Vec<(usize, usize)>> = (0..training.n_users())
        .map(|u| {
            training
                .user(u)
                .iter()
                .enumerate()
                .filter_map(|(q, r)| r.map(|y| (q, y as usize)))
                .collect::<Vec<_>>()
        })
        .filter(|o| !o.is_empty())
        .collect();
    if observations.is_empty() {
        return Err(CatError::EmptyTraining);
    }
    let k = training.n_categories();
    let grid = TraitGrid::<S>::new(dims, grid_config)?;
    let mut bank = IrtItemBank::new(
        kind,
        dims,
        k,
        initial_items(dims, training.n_questions(), k, config.seed),
    )?;
    let layout = Layout {
        kind,
        dims,
        n_thresholds: k - 1,
    };
    let (lo, hi) = layout.bounds::<S>();
    let n_grid = grid.len();

    let mut step = e_step(&bank, &grid, &observations);
    let mut trace = IrtFitTrace {
        log_likelihoods: vec![step.log_likelihood.to_f64_lossy()],
        iterations: 0,
        converged: false,
    };
    for it in 1..=config.max_iters {
        let items: Vec<IrtItem<S>> = bank
            .items
            .par_iter()
            .enumerate()
            .map(|(x, item)| {
                let counts = &step.counts[x * n_grid * k..(x + 1) * n_grid * k];
                if counts.iter().all(|&c| c == S::zero()) {
                    return item.clone();
                }
                let start = layout.pack(item);
                let out = minimize_box(
                    |phi, grad| layout.objective(phi, &grid, counts, grad),
                    &start,
                    &lo,
                    &hi,
                    config.max_optim_iters,
                    S::lit(1e-6),
                );
                layout.unpack(&out.x)
            })
            .collect();
        bank = IrtItemBank::new(kind, dims, k, items)?;
        let prev = step.log_likelihood;
        step = e_step(&bank, &grid, &observations);
        trace
            .log_likelihoods
            .push(step.log_likelihood.to_f64_lossy());
        trace.iterations = it;
        if (step.log_likelihood - prev).abs().to_f64_lossy() < config.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((bank, grid, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(kind: IrtModelKind, dims: usize) {
        let layout = Layout {
            kind,
            dims,
            n_thresholds: 3,
        };
        let grid = TraitGrid::<f64>::new(
            dims,
            &GridConfig {
                theta_max: 3.0,
                points_per_dim: Some(5),
            },
        )
        .unwrap();
        let counts: Vec<f64> = (0..grid.len() * 4)
            .map(|i| ((i * 7919) % 13) as f64 / 5.0)
            .collect();
        let phi: Vec<f64> = (0..layout.len()).map(|i| 0.3 - 0.17 * i as f64).collect();
        let mut grad = vec![0.0; phi.len()];
        layout.objective(&phi, &grid, &counts, &mut grad);
        let mut scratch = vec![0.0; phi.len()];
        for i in 0..phi.len() {
            let h = 1e-6;
            let mut up = phi.clone();
            up[i] += h;
            let mut dn = phi.clone();
            dn[i] -= h;
            let fd = (layout.objective(&up, &grid, &counts, &mut scratch)
                - layout.objective(&dn, &grid, &counts, &mut scratch))
                / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-4 * (1.0 + fd.abs()),
                "{kind:?} coord {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        fd_check(IrtModelKind::Grm, 1);
        fd_check(IrtModelKind::Gpcm, 1);
        fd_check(IrtModelKind::Mgrm, 2);
        fd_check(IrtModelKind::Mgpcm, 3);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let layout = Layout {
            kind: IrtModelKind::Grm,
            dims: 1,
            n_thresholds: 3,
        };
        let item: IrtItem<f64> = IrtItem {
            a: vec![1.5],
            thresholds: vec![-1.0, 0.25, 2.0],
        };
        let back = layout.unpack(&layout.pack(&item));
        assert!((back.a[0] - 1.5).abs() < 1e-12);
        for (x, y) in back.thresholds.iter().zip(&item.thresholds) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_empty_training() {
        let d = ResponseDataset::new(vec!["u".into()], vec!["q".into()], 2, vec![None]).unwrap();
        let err = fit_irt_em::<f64>(
            &d,
            IrtModelKind::Grm,
            1,
            &GridConfig::default(),
            &IrtEmConfig::default(),
        );
        assert!(matches!(err, Err(CatError::EmptyTraining)));
    }
}
