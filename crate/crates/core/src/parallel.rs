//! Deterministic parallel reductions.
//!
//! Work is split into fixed-size chunks; chunks run in parallel and their
//! partial results are merged sequentially in chunk order, so floating point
//! sums do not depend on the number of threads.

use rayon::prelude::*;

pub(crate) fn chunked_reduce<T, I, F, M>(
    n: usize,
    chunk: usize,
    init: I,
    fold: F,
    mut merge: M,
) -> T
where
    T: Send,
    I: Fn() -> T + Sync,
    F: Fn(&mut T, usize) + Sync,
    M: FnMut(&mut T, T),
{
    let partials: Vec<T> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * chunk..((c + 1) * chunk).min(n) {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_result_on_any_pool_size() {
        let xs: Vec<f64> = (0..10_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    chunked_reduce(xs.len(), 64, || 0.0, |a, i| *a += xs[i], |a, b| *a += b)
                })
        };
        assert_eq!(run(1).to_bits(), run(7).to_bits());
    }
}
