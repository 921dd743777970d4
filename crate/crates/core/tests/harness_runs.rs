//! End-to-end runs of the experiment harness and the data plumbing it uses.

use persona_core::dataset::{generate_synthetic_dictionary, generate_synthetic_users};
use persona_core::harness::config::{
    Budget, DataSource, ExperimentConfig, Metric, PolicySpec, PriorSpec, SyntheticSpec,
};
use persona_core::harness::report::render_text;
use persona_core::io::{load_responses, load_tensor, save_responses, save_tensor, TensorBundle};
use persona_core::transforms::{
    cluster_dictionary, deterministic_with_noise, temperature_scale, ClusterConfig, ModeTable,
};
use persona_core::{run_experiment, PersonaPrior};

fn config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(DataSource::Synthetic(SyntheticSpec {
        n_personas: 12,
        n_questions: 10,
        n_categories: 4,
        concentration: 0.5,
        n_users: 300,
        persona_weights: None,
        seed: 11,
    }));
    c.targets.count = 3;
    c.budgets = vec![Budget::Count(2), Budget::Count(4), Budget::All];
    c.policies = vec![
        PolicySpec::Greedy,
        PolicySpec::Nonadaptive,
        PolicySpec::Random,
        PolicySpec::RandomFixed,
        PolicySpec::Full,
        "cat_grm".parse().unwrap(),
    ];
    c.mc_samples = 300;
    c.likelihood_floor = Some(1e-6);
    c.cat.em.max_iters = 10;
    c
}

#[test]
fn identical_config_gives_identical_tables_at_any_thread_count() {
    let c = config();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment::<f64>(&c).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(
        serde_json::to_string(&one.table).unwrap(),
        serde_json::to_string(&four.table).unwrap()
    );
    assert_eq!(one.table, run_experiment::<f64>(&c).unwrap().table);
    assert_eq!(render_text(&one.table), render_text(&four.table));
}

#[test]
fn policies_agree_once_everything_is_asked() {
    let mut c = config();
    c.policies.retain(|p| !p.is_cat());
    c.prior = PriorSpec::Uniform;
    let out = run_experiment::<f64>(&c).unwrap();
    let all = *out.table.budgets.last().unwrap();
    for metric in Metric::ALL {
        let base = out.table.cell("greedy", all, metric).unwrap().mean;
        for p in &out.table.policies {
            assert!((out.table.cell(p, all, metric).unwrap().mean - base).abs() < 1e-9);
        }
    }
}

#[test]
fn file_backed_run_matches_the_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let (tensor, prior) = generate_synthetic_dictionary::<f64>(5, 6, 3, 0.8, 4).unwrap();
    let users = generate_synthetic_users(&prior, &tensor, 50, 4).unwrap();
    let tpath = dir.path().join("tensor.jsonl");
    let rpath = dir.path().join("responses.csv");
    let bundle = TensorBundle {
        persona_ids: (0..5).map(|i| format!("p{i}")).collect(),
        question_ids: users.dataset.question_ids().to_vec(),
        tensor: tensor.clone(),
    };
    save_tensor(&bundle, &tpath).unwrap();
    save_responses(&users.dataset, &rpath).unwrap();
    assert_eq!(load_tensor::<f64>(&tpath).unwrap(), bundle);
    assert_eq!(load_responses(&rpath).unwrap(), users.dataset);

    let synthetic = SyntheticSpec {
        n_personas: 5,
        n_questions: 6,
        n_categories: 3,
        concentration: 0.8,
        n_users: 50,
        persona_weights: None,
        seed: 4,
    };
    let mut a = ExperimentConfig::new(DataSource::Synthetic(synthetic));
    a.targets.count = 2;
    a.budgets = vec![Budget::Count(1), Budget::All];
    let mut b = a.clone();
    b.data = DataSource::Files {
        tensor: tpath,
        responses: rpath,
    };
    assert_eq!(
        run_experiment::<f64>(&a).unwrap().table,
        run_experiment::<f64>(&b).unwrap().table
    );
}

#[test]
fn synthetic_marginals_match_the_mixture() {
    let (tensor, _) = generate_synthetic_dictionary::<f64>(4, 3, 3, 1.0, 12).unwrap();
    let prior = PersonaPrior::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let n = 100_000;
    let users = generate_synthetic_users(&prior, &tensor, n, 12).unwrap();
    for q in 0..3 {
        let mut counts = [0usize; 3];
        for u in 0..n {
            counts[users.dataset.get(u, q).unwrap() as usize] += 1;
        }
        for c in 0..3 {
            let p: f64 = (0..4)
                .map(|t| prior.weights()[t] * tensor.prob(t, q, c))
                .sum();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let hat = counts[c] as f64 / n as f64;
            assert!(
                (hat - p).abs() <= 3.0 * se,
                "question {q} category {c}: {hat} vs {p}"
            );
        }
    }
}

#[test]
fn transform_identities() {
    let (tensor, _) = generate_synthetic_dictionary::<f64>(7, 5, 4, 0.6, 8).unwrap();
    let prior = PersonaPrior::from_masses((1..=7).map(|i| i as f64).collect()).unwrap();

    let scaled = temperature_scale(&tensor, 1.0).unwrap();
    for (a, b) in scaled.probs().iter().zip(tensor.probs()) {
        assert!((a - b).abs() <= 1e-12);
    }

    let noisy = deterministic_with_noise::<f64>(&ModeTable::from_argmax(&tensor), 0.75).unwrap();
    assert!(noisy.probs().iter().all(|p| (p - 0.25).abs() <= 1e-12));

    let clustered = cluster_dictionary(&tensor, &prior, &ClusterConfig::new(7)).unwrap();
    for (a, b) in clustered.tensor.probs().iter().zip(tensor.probs()) {
        assert!((a - b).abs() <= 1e-12);
    }
    for q in 0..5 {
        for c in 0..4 {
            let before: f64 = (0..7)
                .map(|t| prior.weights()[t] * tensor.prob(t, q, c))
                .sum();
            let after: f64 = (0..7)
                .map(|t| clustered.prior.weights()[t] * clustered.tensor.prob(t, q, c))
                .sum();
            assert!((before - after).abs() <= 1e-10);
        }
    }
}
