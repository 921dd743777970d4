//! Box-constrained quasi-Newton minimization (projected BFGS).

use crate::scalar::Scalar;

pub(crate) struct OptimOutcome<S> {
    pub x: Vec<S>,
}

fn project<S: Scalar>(x: &mut [S], lo: &[S], hi: &[S]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.max(l).min(h);
    }
}

/// Minimizes `f` over the box `[lo, hi]` starting from `x0`.
///
/// `f` returns the objective and writes the gradient into its second
/// argument. Each accepted step satisfies an Armijo condition along the
/// projected path, so the returned value never exceeds `f(x0)`.
pub(crate) fn minimize_box<S: Scalar, F>(
    mut f: F,
    x0: &[S],
    lo: &[S],
    hi: &[S],
    max_iter: usize,
    gtol: S,
) -> OptimOutcome<S>
where
    F: FnMut(&[S], &mut [S]) -> S,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![S::zero(); n];
    let mut fx = f(&x, &mut g);
    let identity = |h: &mut Vec<S>| {
        h.iter_mut().for_each(|v| *v = S::zero());
        for i in 0..n {
            h[i * n + i] = S::one();
        }
    };
    let mut h = vec![S::zero(); n * n];
    identity(&mut h);
    let mut h_is_identity = true;
    let mut x_new = vec![S::zero(); n];
    let mut g_new = vec![S::zero(); n];
    let c1 = S::lit(1e-4);

    for _ in 0..max_iter {
        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lo[i] && g[i] > S::zero()) || (x[i] >= hi[i] && g[i] < S::zero()))
            .collect();
        let pg_norm = (0..n)
            .filter(|&i| !active[i])
            .map(|i| g[i].abs())
            .fold(S::zero(), S::max);
        if pg_norm < gtol {
            break;
        }
        let mut d: Vec<S> = (0..n)
            .map(|i| {
                if active[i] {
                    S::zero()
                } else {
                    -(0..n)
                        .filter(|&j| !active[j])
                        .map(|j| h[i * n + j] * g[j])
                        .sum::<S>()
                }
            })
            .collect();
        let slope: S = d.iter().zip(&g).map(|(&a, &b)| a * b).sum();
        if !(slope < S::zero()) {
            identity(&mut h);
            h_is_identity = true;
            for i in 0..n {
                d[i] = if active[i] { S::zero() } else { -g[i] };
            }
        }

        let mut t = S::one();
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + t * d[i];
            }
            project(&mut x_new, lo, hi);
            f_new = f(&x_new, &mut g_new);
            let decrease: S = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            if f_new.is_finite() && f_new <= fx + c1 * decrease {
                accepted = true;
                break;
            }
            t *= S::lit(0.5);
        }
        if !accepted {
            if h_is_identity {
                break;
            }
            identity(&mut h);
            h_is_identity = true;
            continue;
        }

        let s: Vec<S> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<S> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: S = s.iter().zip(&y).map(|(&a, &b)| a * b).sum();
        let s_norm: S = s.iter().map(|&v| v * v).sum::<S>().sqrt();
        let y_norm: S = y.iter().map(|&v| v * v).sum::<S>().sqrt();
        if sy > S::lit(1e-10) * s_norm * y_norm {
            let rho = S::one() / sy;
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let hy: Vec<S> = (0..n)
                .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
                .collect();
            let yhy: S = y.iter().zip(&hy).map(|(&a, &b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            h_is_identity = false;
        }
        let improvement = fx - f_new;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        if improvement <= S::lit(1e-14) * (S::one() + fx.abs()) {
            break;
        }
    }
    OptimOutcome { x }
}
