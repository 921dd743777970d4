//! Category probabilities and Fisher information of the IRT models.

use persona_core::cat::{IrtItem, IrtModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn grm_hand_example() {
    let item = IrtItem {
        a: vec![1.0],
        thresholds: vec![-1.0, 0.0, 1.0],
    };
    let p = item.category_probs(IrtModelKind::Grm, &[0.0]);
    for (got, want) in p.iter().zip([0.2689f64, 0.2311, 0.2311, 0.2689]) {
        assert!((got - want).abs() < 1e-4, "{p:?}");
    }
}

fn random_item(rng: &mut ChaCha8Rng, kind: IrtModelKind, dims: usize, k: usize) -> IrtItem<f64> {
    let a = (0..dims).map(|_| rng.random_range(0.3..2.5)).collect();
    let mut t: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
    if kind.is_graded() {
        t.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for i in 1..t.len() {
            if t[i] - t[i - 1] < 0.05 {
                t[i] = t[i - 1] + 0.05;
            }
        }
    }
    IrtItem { a, thresholds: t }
}

#[test]
fn fisher_information_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let kinds = [
        IrtModelKind::Grm,
        IrtModelKind::Gpcm,
        IrtModelKind::Mgrm,
        IrtModelKind::Mgpcm,
    ];
    let h = 1e-5;
    for draw in 0..1000 {
        let kind = kinds[draw % 4];
        let dims = if kind.is_multidimensional() {
            rng.random_range(1..=3)
        } else {
            1
        };
        let k = rng.random_range(2..=5);
        let item = random_item(&mut rng, kind, dims, k);
        let theta: Vec<f64> = (0..dims).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = item.category_probs(kind, &theta);
        let grads: Vec<Vec<f64>> = (0..dims)
            .map(|d| {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[d] += h;
                down[d] -= h;
                let pu = item.category_probs(kind, &up);
                let pd = item.category_probs(kind, &down);
                pu.iter()
                    .zip(&pd)
                    .map(|(u, l)| (u - l) / (2.0 * h))
                    .collect()
            })
            .collect();
        let info = item.fisher_information(kind, &theta);
        for i in 0..dims {
            for j in 0..dims {
                let fd: f64 = (0..k).map(|c| grads[i][c] * grads[j][c] / p[c]).sum();
                let got = info[i * dims + j];
                assert!(
                    (got - fd).abs() < 1e-6,
                    "draw {draw} {kind:?}: {got} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn multidimensional_models_reduce_to_unidimensional_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (uni, multi) in [
        (IrtModelKind::Grm, IrtModelKind::Mgrm),
        (IrtModelKind::Gpcm, IrtModelKind::Mgpcm),
    ] {
        for _ in 0..200 {
            let k = rng.random_range(2..=6);
            let item = random_item(&mut rng, uni, 1, k);
            let as_multi = IrtItem {
                a: item.a.clone(),
                thresholds: item.intercepts(uni),
            };
            let theta = [rng.random_range(-4.0..4.0)];
            let p = item.category_probs(uni, &theta);
            let q = as_multi.category_probs(multi, &theta);
            for (x, y) in p.iter().zip(&q) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
