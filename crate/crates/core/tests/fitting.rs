//! Prior EM and IRT calibration on simulated data.

use persona_core::cat::{fit_irt_em, GridConfig, IrtEmConfig, IrtItem, IrtModelKind};
use persona_core::dataset::generate_synthetic_users;
use persona_core::prior_fit::fit_prior_em;
use persona_core::{EmConfig, LikelihoodTensor, PersonaPrior, ResponseDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn separated_tensor(m: usize) -> LikelihoodTensor<f64> {
    let mut probs = Vec::new();
    for p in 0..2 {
        for _ in 0..m {
            probs.extend(if p == 0 {
                [0.7, 0.2, 0.06, 0.04]
            } else {
                [0.04, 0.06, 0.2, 0.7]
            });
        }
    }
    LikelihoodTensor::new(2, m, 4, probs).unwrap()
}

#[test]
fn em_recovers_a_two_persona_prior() {
    let tensor = separated_tensor(10);
    let truth = PersonaPrior::new(vec![0.3, 0.7]).unwrap();
    let users = generate_synthetic_users(&truth, &tensor, 5_000, 17).unwrap();
    let (prior, trace) = fit_prior_em(&users.dataset, &tensor, &EmConfig::default()).unwrap();
    assert!(trace.is_monotone(1e-9));
    assert!(
        (prior.weights()[0] - 0.3).abs() <= 0.03,
        "{:?}",
        prior.weights()
    );
    assert!((prior.weights()[1] - 0.7).abs() <= 0.03);
}

#[test]
fn em_is_monotone_with_missing_answers_and_many_personas() {
    let (tensor, _) =
        persona_core::dataset::generate_synthetic_dictionary::<f64>(12, 8, 3, 0.7, 2).unwrap();
    let truth = PersonaPrior::from_masses((1..=12).map(|i| i as f64).collect()).unwrap();
    let users = generate_synthetic_users(&truth, &tensor, 400, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let responses: Vec<Option<u8>> = users
        .dataset
        .responses()
        .iter()
        .map(|r| if rng.random_bool(0.25) { None } else { *r })
        .collect();
    let data = ResponseDataset::new(
        users.dataset.user_ids().to_vec(),
        users.dataset.question_ids().to_vec(),
        3,
        responses,
    )
    .unwrap();
    let (_, trace) = fit_prior_em(&data, &tensor, &EmConfig::default()).unwrap();
    assert!(trace.is_monotone(1e-9), "{:?}", trace.log_likelihoods);
}

fn simulate_irt(
    kind: IrtModelKind,
    items: &[IrtItem<f64>],
    n_users: usize,
    seed: u64,
) -> ResponseDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = items[0].n_categories();
    let dims = items[0].dims();
    let mut responses = Vec::with_capacity(n_users * items.len());
    for _ in 0..n_users {
        let theta: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
        for item in items {
            let p = item.category_probs(kind, &theta);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = k - 1;
            for (c, pc) in p.iter().enumerate() {
                acc += pc;
                if u < acc {
                    y = c;
                    break;
                }
            }
            responses.push(Some(y as u8));
        }
    }
    ResponseDataset::new(
        (0..n_users).map(|u| format!("u{u}")).collect(),
        (0..items.len()).map(|q| format!("q{q}")).collect(),
        k,
        responses,
    )
    .unwrap()
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn grm_recovers_discriminations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let items: Vec<IrtItem<f64>> = (0..30)
        .map(|_| {
            let a = rng.random_range(0.8..2.0);
            let mut b: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            b.sort_by(|x: &f64, y| x.partial_cmp(y).unwrap());
            IrtItem {
                a: vec![a],
                thresholds: b,
            }
        })
        .collect();
    let data = simulate_irt(IrtModelKind::Grm, &items, 5_000, 21);
    let (bank, _, trace) = fit_irt_em::<f64>(
        &data,
        IrtModelKind::Grm,
        1,
        &GridConfig::default(),
        &IrtEmConfig::default(),
    )
    .unwrap();
    assert!(trace.is_monotone(1e-6));
    let truth: Vec<f64> = items.iter().map(|i| i.a[0]).collect();
    let fitted: Vec<f64> = bank.items.iter().map(|i| i.a[0]).collect();
    let r = correlation(&truth, &fitted);
    assert!(r > 0.9, "r = {r}");
    let b_err: f64 = items
        .iter()
        .zip(&bank.items)
        .flat_map(|(t, f)| {
            t.thresholds
                .iter()
                .zip(&f.thresholds)
                .map(|(x, y)| (x - y).abs())
        })
        .sum::<f64>()
        / (items.len() * 3) as f64;
    assert!(b_err < 0.15, "mean threshold error {b_err}");
}

#[test]
fn gpcm_fit_has_nondecreasing_likelihood() {
    let items: Vec<IrtItem<f64>> = (0..8)
        .map(|i| IrtItem {
            a: vec![0.8 + 0.1 * i as f64],
            thresholds: vec![-0.8, 0.1, 0.9],
        })
        .collect();
    let data = simulate_irt(IrtModelKind::Gpcm, &items, 800, 5);
    let (_, _, trace) = fit_irt_em::<f64>(
        &data,
        IrtModelKind::Gpcm,
        1,
        &GridConfig::default(),
        &IrtEmConfig::default(),
    )
    .unwrap();
    assert!(trace.is_monotone(1e-6), "{:?}", trace.log_likelihoods);
}
