//! Runs every configured policy over the test users and aggregates scores.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cat::{
    fit_irt_em, CatCriterion, CatModel, CatSession, IrtFitTrace, IrtModelKind, TraitGrid,
};
use crate::dataset::{
    generate_synthetic_dictionary, generate_synthetic_users, split_users, ResponseDataset,
    SyntheticUsers,
};
use crate::io::{load_responses, load_tensor_fast, read_json, tensor_hash, BankFile, PriorFile};
use crate::persona::{LikelihoodTensor, PersonaPrior};
use crate::policy::{
    design_nonadaptive, estimate_expected_uncertainty, random_fixed_order,
    run_session_with_checkpoints, PolicyKind,
};
use crate::prior_fit::{fit_prior_em, EmTrace};
use crate::rng::{purpose, stream_rng};
use crate::scalar::Scalar;
use crate::scoring::{brier_score, log_score, ordinal_mse, ScoringError, UncertaintyKind};

use super::config::{
    Budget, DataSource, ExperimentConfig, Metric, PolicySpec, PriorSpec, SyntheticSpec, TargetSpec,
};
use super::HarnessError;

/// Tensor and users before any model fitting.
#[derive(Debug, Clone)]
pub struct PreparedData<S> {
    pub persona_ids: Vec<String>,
    pub question_ids: Vec<String>,
    /// As loaded or generated, before any floor.
    pub tensor: LikelihoodTensor<S>,
    pub tensor_sha256: String,
    pub train: ResponseDataset,
    pub test: ResponseDataset,
}

/// Generates the dictionary, the generating prior and the users of `spec`.
pub fn synthesize<S: Scalar>(
    spec: &SyntheticSpec,
) -> Result<(LikelihoodTensor<S>, PersonaPrior<S>, SyntheticUsers), HarnessError> {
    let (tensor, uniform) = generate_synthetic_dictionary::<S>(
        spec.n_personas,
        spec.n_questions,
        spec.n_categories,
        spec.concentration,
        spec.seed,
    )?;
    let prior = match &spec.persona_weights {
        Some(w) => PersonaPrior::from_masses(w.iter().map(|&x| S::lit(x)).collect())?,
        None => uniform,
    };
    let users = generate_synthetic_users(&prior, &tensor, spec.n_users, spec.seed)?;
    Ok((tensor, prior, users))
}

/// Loads or generates the data named by the config and splits the users.
pub fn prepare_data<S: Scalar>(config: &ExperimentConfig) -> Result<PreparedData<S>, HarnessError> {
    let (persona_ids, question_ids, tensor, users) = match &config.data {
        DataSource::Synthetic(spec) => {
            let (tensor, _, users) = synthesize::<S>(spec)?;
            let persona_ids = (0..spec.n_personas).map(|i| format!("p{i}")).collect();
            (
                persona_ids,
                users.dataset.question_ids().to_vec(),
                tensor,
                users.dataset,
            )
        }
        DataSource::Files { tensor, responses } => {
            let bundle = load_tensor_fast::<S>(tensor)?;
            let users = load_responses(responses)?;
            if users.question_ids() != bundle.question_ids.as_slice() {
                return Err(HarnessError::Config(format!(
                    "question ids of {} differ from those of {}",
                    responses.display(),
                    tensor.display()
                )));
            }
            users.check_against(&bundle.tensor)?;
            (
                bundle.persona_ids,
                bundle.question_ids,
                bundle.tensor,
                users,
            )
        }
    };
    let (train, mut test) = split_users(&users, &config.split)?;
    if let Some(limit) = config.max_test_users {
        test = test.subset(&(0..limit.min(test.n_users())).collect::<Vec<_>>());
    }
    Ok(PreparedData {
        persona_ids,
        question_ids,
        tensor_sha256: tensor_hash(&tensor),
        tensor,
        train,
        test,
    })
}

/// Target question indices, sorted.
pub fn choose_targets(
    question_ids: &[String],
    spec: &TargetSpec,
) -> Result<Vec<usize>, HarnessError> {
    let m = question_ids.len();
    let mut targets = match &spec.ids {
        Some(ids) => {
            ids.iter()
                .map(|id| {
                    question_ids.iter().position(|q| q == id).ok_or_else(|| {
                        HarnessError::Config(format!("unknown target question {id:?}"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => {
            if spec.count >= m {
                return Err(HarnessError::Config(format!(
                    "{} targets leave no feasible question among {m}",
                    spec.count
                )));
            }
            let mut rng = stream_rng(spec.seed, purpose::TARGETS, 0);
            sample(&mut rng, m, spec.count).into_vec()
        }
    };
    targets.sort_unstable();
    let before = targets.len();
    targets.dedup();
    if targets.len() != before {
        return Err(HarnessError::Config("target list has duplicates".into()));
    }
    if targets.is_empty() || targets.len() >= m {
        return Err(HarnessError::Config(format!(
            "need between 1 and {} targets, got {}",
            m - 1,
            targets.len()
        )));
    }
    Ok(targets)
}

/// Aggregate of one metric for one policy at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultCell {
    pub policy: String,
    pub budget: usize,
    pub metric: Metric,
    /// Mean over observed (user, target) pairs.
    pub mean: f64,
    /// Sample standard deviation over pairs divided by `sqrt(n_pairs)`;
    /// zero when fewer than two pairs exist.
    pub std_err: f64,
    pub n_pairs: usize,
    /// Test users with at least one observed target.
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub policies: Vec<String>,
    pub budgets: Vec<usize>,
    pub metrics: Vec<Metric>,
    pub targets: Vec<String>,
    pub n_test_users: usize,
    pub cells: Vec<ResultCell>,
}

impl ResultTable {
    pub fn cell(&self, policy: &str, budget: usize, metric: Metric) -> Option<&ResultCell> {
        self.cells
            .iter()
            .find(|c| c.policy == policy && c.budget == budget && c.metric == metric)
    }
}

/// Wall-clock seconds, kept apart from the deterministic table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub fit: BTreeMap<String, f64>,
    pub inference: BTreeMap<String, f64>,
}

/// Per-pair scores behind every cell, aligned across policies so that paired
/// tests are possible.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    /// `(test user, target question)` for every observed pair.
    pub pairs: Vec<(usize, usize)>,
    budgets: Vec<usize>,
    /// Policy → budget index → pair index → metric values.
    scores: BTreeMap<String, Vec<Vec<[f64; 3]>>>,
}

impl PairScores {
    pub fn values(&self, policy: &str, budget: usize, metric: Metric) -> Option<Vec<f64>> {
        let b = self.budgets.iter().position(|&x| x == budget)?;
        let rows = self.scores.get(policy)?;
        Some(rows[b].iter().map(|s| s[metric.index()]).collect())
    }

    /// t statistic of the mean of `a - b` over pairs; positive when `a`
    /// scores higher.
    pub fn paired_t(&self, a: &str, b: &str, budget: usize, metric: Metric) -> Option<f64> {
        let xa = self.values(a, budget, metric)?;
        let xb = self.values(b, budget, metric)?;
        let d: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x - y).collect();
        let (mean, se) = mean_and_se(&d);
        (d.len() >= 2 && se > 0.0).then(|| mean / se)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub timings: Timings,
    #[serde(skip)]
    pub pairs: PairScores,
    /// Precomputed question orders (as ids) for list-based policies.
    pub designs: BTreeMap<String, Vec<String>>,
    pub prior_weights: Vec<f64>,
    pub em_trace: Option<EmTrace>,
    pub cat_traces: BTreeMap<String, IrtFitTrace>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn score<S: Scalar>(p: &[S], outcome: usize) -> Result<[f64; 3], ScoringError> {
    Ok([
        log_score(p, outcome)?.to_f64_lossy(),
        brier_score(p, outcome)?.to_f64_lossy(),
        ordinal_mse(p, outcome)?.to_f64_lossy(),
    ])
}

enum Runner {
    Persona(PolicyKind),
    Cat {
        model: usize,
        criterion: CatCriterion,
    },
}

struct Context<'a, S> {
    test: &'a ResponseDataset,
    tensor: &'a LikelihoodTensor<S>,
    prior: &'a PersonaPrior<S>,
    targets: &'a [usize],
    feasible: &'a [usize],
    budgets: &'a [usize],
    kind: UncertaintyKind,
    seed: u64,
}

impl<S: Scalar> Context<'_, S> {
    fn observed_targets(&self, u: usize) -> Vec<usize> {
        let responses = self.test.user(u);
        self.targets
            .iter()
            .copied()
            .filter(|&t| responses[t].is_some())
            .collect()
    }

    /// Writes the scores of state `t` into every budget slot it serves.
    fn snapshot(
        &self,
        u: usize,
        t: usize,
        length: usize,
        observed: &[usize],
        out: &mut [[f64; 3]],
        mut predict: impl FnMut(usize) -> Result<Vec<S>, HarnessError>,
    ) -> Result<(), HarnessError> {
        let responses = self.test.user(u);
        for (b, &budget) in self.budgets.iter().enumerate() {
            if budget.min(length) != t {
                continue;
            }
            for (j, &target) in observed.iter().enumerate() {
                let p = predict(target)?;
                let y = responses[target].expect("observed target") as usize;
                out[b * observed.len() + j] = score(&p, y)?;
            }
        }
        Ok(())
    }

    /// Scores laid out budget-major over the user's observed targets.
    fn run_persona(&self, u: usize, policy: &PolicyKind) -> Result<Vec<[f64; 3]>, HarnessError> {
        let observed = self.observed_targets(u);
        let mut out = vec![[0.0; 3]; self.budgets.len() * observed.len()];
        if observed.is_empty() {
            return Ok(out);
        }
        let responses = self.test.user(u);
        let max_budget = *self.budgets.last().expect("non-empty budgets");
        let length = self
            .feasible
            .iter()
            .filter(|&&q| responses[q].is_some())
            .count()
            .min(max_budget);
        let mut rng = stream_rng(self.seed, purpose::RANDOM_POLICY, u as u64);
        let mut failure = None;
        run_session_with_checkpoints(
            responses,
            max_budget,
            policy,
            self.feasible,
            self.targets,
            self.prior,
            self.tensor,
            self.kind,
            &mut rng,
            self.budgets,
            |c, state| {
                if failure.is_some() {
                    return;
                }
                let t = c.min(length);
                let result = self.snapshot(u, t, length, &observed, &mut out, |target| {
                    Ok(state.predictive(target, self.tensor)?)
                });
                if let Err(e) = result {
                    failure = Some(e);
                }
            },
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    fn run_cat(
        &self,
        u: usize,
        model: &CatModel<S>,
        criterion: CatCriterion,
    ) -> Result<Vec<[f64; 3]>, HarnessError> {
        let observed = self.observed_targets(u);
        let mut out = vec![[0.0; 3]; self.budgets.len() * observed.len()];
        if observed.is_empty() {
            return Ok(out);
        }
        let responses = self.test.user(u);
        let mut remaining: Vec<usize> = self
            .feasible
            .iter()
            .copied()
            .filter(|&q| responses[q].is_some())
            .collect();
        let length = remaining
            .len()
            .min(*self.budgets.last().expect("non-empty budgets"));
        let mut session = CatSession::new(model);
        for t in 0..=length {
            self.snapshot(u, t, length, &observed, &mut out, |target| {
                Ok(session.predict(model, target)?)
            })?;
            if t == length {
                break;
            }
            let x = session.select(model, &remaining, criterion)?;
            remaining.retain(|&q| q != x);
            let y = responses[x].expect("feasible questions are answered") as usize;
            session = session.update(model, x, y)?;
        }
        Ok(out)
    }
}

fn load_prior<S: Scalar>(
    config: &ExperimentConfig,
    data: &PreparedData<S>,
    tensor: &LikelihoodTensor<S>,
    timings: &mut Timings,
) -> Result<(PersonaPrior<S>, Option<EmTrace>), HarnessError> {
    match &config.prior {
        PriorSpec::Uniform => Ok((PersonaPrior::uniform(tensor.n_personas()), None)),
        PriorSpec::Em => {
            let start = Instant::now();
            let (prior, trace) = fit_prior_em(&data.train, tensor, &config.em)?;
            timings
                .fit
                .insert("prior_em".into(), start.elapsed().as_secs_f64());
            Ok((prior, Some(trace)))
        }
        PriorSpec::File(path) => {
            let file: PriorFile = read_json(path)?;
            if file.tensor_sha256 != data.tensor_sha256 {
                return Err(HarnessError::Config(format!(
                    "prior {} was fitted for tensor {}, not {}",
                    path.display(),
                    file.tensor_sha256,
                    data.tensor_sha256
                )));
            }
            let prior = file.prior::<S>()?;
            if prior.len() != tensor.n_personas() {
                return Err(HarnessError::Config(format!(
                    "prior {} has {} personas, tensor has {}",
                    path.display(),
                    prior.len(),
                    tensor.n_personas()
                )));
            }
            Ok((prior, file.trace))
        }
    }
}

/// Loads or fits the item bank for `kind`.
pub fn obtain_cat_model<S: Scalar>(
    kind: IrtModelKind,
    config: &ExperimentConfig,
    data: &PreparedData<S>,
) -> Result<(CatModel<S>, Option<IrtFitTrace>), HarnessError> {
    if let Some(path) = config.cat.banks.get(kind.name()) {
        let file: BankFile = read_json(path)?;
        file.bank.validate()?;
        if file.bank.kind != kind {
            return Err(HarnessError::Config(format!(
                "bank {} holds a {} model, expected {}",
                path.display(),
                file.bank.kind.name(),
                kind.name()
            )));
        }
        if file.question_ids != data.question_ids {
            return Err(HarnessError::Config(format!(
                "bank {} was calibrated on different questions",
                path.display()
            )));
        }
        let grid = TraitGrid::new(file.bank.dims, &file.grid)?;
        return Ok((CatModel::new(file.bank.cast()?, grid)?, file.trace));
    }
    if !config.cat.fit_inline {
        return Err(HarnessError::MissingArtifact(format!(
            "item bank for cat_{0}: set cat.banks.{0} or enable cat.fit_inline",
            kind.name()
        )));
    }
    let dims = if kind.is_multidimensional() {
        config.cat.dims.unwrap_or(kind.default_dims())
    } else {
        1
    };
    let (bank, grid, trace) =
        fit_irt_em::<S>(&data.train, kind, dims, &config.cat.grid, &config.cat.em)?;
    Ok((CatModel::new(bank, grid)?, Some(trace)))
}

/// A user-independent question list chosen for the configured targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub targets: Vec<String>,
    pub questions: Vec<String>,
    /// Monte Carlo estimate of the expected target uncertainty after the
    /// whole list has been answered.
    pub expected_uncertainty: f64,
    pub std_err: f64,
}

/// Runs the non-adaptive design on prepared data with the config's prior,
/// floor, targets and random stream.
pub fn design_nonadaptive_for<S: Scalar>(
    config: &ExperimentConfig,
    data: &PreparedData<S>,
    budget: Budget,
) -> Result<Design, HarnessError> {
    config.validate()?;
    let tensor = match config.likelihood_floor {
        Some(f) if f > 0.0 => data.tensor.floored(S::lit(f)),
        _ => data.tensor.clone(),
    };
    let targets = choose_targets(&data.question_ids, &config.targets)?;
    let feasible: Vec<usize> = (0..tensor.n_questions())
        .filter(|q| !targets.contains(q))
        .collect();
    let budget = budget.resolve(feasible.len())?;
    let (prior, _) = load_prior(config, data, &tensor, &mut Timings::default())?;
    let mut rng = stream_rng(config.seed, purpose::NONADAPTIVE_MC, 0);
    let order = design_nonadaptive(
        budget,
        &feasible,
        &targets,
        &prior,
        &tensor,
        config.uncertainty,
        config.mc_samples,
        &mut rng,
    )?;
    let mut check_rng = stream_rng(config.seed, purpose::NONADAPTIVE_MC, 1);
    let estimate = estimate_expected_uncertainty(
        &order,
        &targets,
        &prior,
        &tensor,
        config.uncertainty,
        config.mc_samples,
        &mut check_rng,
    )?;
    let ids = |qs: &[usize]| qs.iter().map(|&q| data.question_ids[q].clone()).collect();
    Ok(Design {
        targets: ids(&targets),
        questions: ids(&order),
        expected_uncertainty: estimate.mean.to_f64_lossy(),
        std_err: estimate.std_err.to_f64_lossy(),
    })
}

/// Loads the data and runs the configured experiment.
pub fn run_experiment<S: Scalar>(
    config: &ExperimentConfig,
) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let data = prepare_data::<S>(config)?;
    run_on_data(config, &data)
}

/// Runs the experiment on already prepared data.
pub fn run_on_data<S: Scalar>(
    config: &ExperimentConfig,
    data: &PreparedData<S>,
) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let mut timings = Timings::default();
    let tensor = match config.likelihood_floor {
        Some(f) if f > 0.0 => data.tensor.floored(S::lit(f)),
        _ => data.tensor.clone(),
    };
    let targets = choose_targets(&data.question_ids, &config.targets)?;
    let feasible: Vec<usize> = (0..tensor.n_questions())
        .filter(|q| !targets.contains(q))
        .collect();
    let mut budgets = config
        .budgets
        .iter()
        .map(|b| b.resolve(feasible.len()))
        .collect::<Result<Vec<_>, _>>()?;
    budgets.sort_unstable();
    budgets.dedup();
    let max_budget = *budgets.last().expect("validated non-empty");

    let (prior, em_trace) = load_prior(config, data, &tensor, &mut timings)?;

    let mut designs = BTreeMap::new();
    let mut cat_models: Vec<CatModel<S>> = Vec::new();
    let mut cat_index: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut cat_traces = BTreeMap::new();
    let mut runners = Vec::with_capacity(config.policies.len());
    let ids = |order: &[usize]| {
        order
            .iter()
            .map(|&q| data.question_ids[q].clone())
            .collect::<Vec<_>>()
    };
    for spec in &config.policies {
        let runner = match *spec {
            PolicySpec::Greedy => Runner::Persona(PolicyKind::Greedy),
            PolicySpec::Random => Runner::Persona(PolicyKind::Random),
            PolicySpec::Full => Runner::Persona(PolicyKind::Full),
            PolicySpec::Nonadaptive => {
                let start = Instant::now();
                let mut rng = stream_rng(config.seed, purpose::NONADAPTIVE_MC, 0);
                let order = design_nonadaptive(
                    max_budget,
                    &feasible,
                    &targets,
                    &prior,
                    &tensor,
                    config.uncertainty,
                    config.mc_samples,
                    &mut rng,
                )?;
                timings
                    .fit
                    .insert("nonadaptive_design".into(), start.elapsed().as_secs_f64());
                designs.insert(spec.to_string(), ids(&order));
                Runner::Persona(PolicyKind::Nonadaptive(order))
            }
            PolicySpec::RandomFixed => {
                let mut rng = stream_rng(config.seed, purpose::RANDOM_FIXED, 0);
                let order = random_fixed_order(&feasible, &mut rng);
                designs.insert(spec.to_string(), ids(&order[..max_budget]));
                Runner::Persona(PolicyKind::RandomFixed(order))
            }
            PolicySpec::Cat { model, criterion } => {
                let slot = match cat_index.get(model.name()) {
                    Some(&i) => i,
                    None => {
                        let start = Instant::now();
                        let (m, trace) = obtain_cat_model(model, config, data)?;
                        timings.fit.insert(
                            format!("cat_{}", model.name()),
                            start.elapsed().as_secs_f64(),
                        );
                        if let Some(trace) = trace {
                            cat_traces.insert(model.name().to_string(), trace);
                        }
                        cat_models.push(m);
                        cat_index.insert(model.name(), cat_models.len() - 1);
                        cat_models.len() - 1
                    }
                };
                let dims = cat_models[slot].grid().dims();
                Runner::Cat {
                    model: slot,
                    criterion: criterion
                        .or(config.cat.criterion)
                        .unwrap_or(CatCriterion::default_for(dims)),
                }
            }
        };
        runners.push(runner);
    }

    let ctx = Context {
        test: &data.test,
        tensor: &tensor,
        prior: &prior,
        targets: &targets,
        feasible: &feasible,
        budgets: &budgets,
        kind: config.uncertainty,
        seed: config.seed,
    };
    let n_test = data.test.n_users();
    let observed: Vec<Vec<usize>> = (0..n_test).map(|u| ctx.observed_targets(u)).collect();
    let pairs: Vec<(usize, usize)> = observed
        .iter()
        .enumerate()
        .flat_map(|(u, ts)| ts.iter().map(move |&t| (u, t)))
        .collect();
    let n_users = observed.iter().filter(|ts| !ts.is_empty()).count();

    let mut cells = Vec::new();
    let mut scores = BTreeMap::new();
    for (spec, runner) in config.policies.iter().zip(&runners) {
        let start = Instant::now();
        let per_user: Vec<Vec<[f64; 3]>> = (0..n_test)
            .into_par_iter()
            .map(|u| match runner {
                Runner::Persona(policy) => ctx.run_persona(u, policy),
                Runner::Cat { model, criterion } => ctx.run_cat(u, &cat_models[*model], *criterion),
            })
            .collect::<Result<_, _>>()?;
        timings
            .inference
            .insert(spec.to_string(), start.elapsed().as_secs_f64());

        let by_budget: Vec<Vec<[f64; 3]>> = (0..budgets.len())
            .map(|b| {
                per_user
                    .iter()
                    .zip(&observed)
                    .flat_map(|(s, ts)| s[b * ts.len()..(b + 1) * ts.len()].iter().copied())
                    .collect()
            })
            .collect();
        for (b, &budget) in budgets.iter().enumerate() {
            for &metric in &config.metrics {
                let values: Vec<f64> = by_budget[b].iter().map(|s| s[metric.index()]).collect();
                let (mean, std_err) = mean_and_se(&values);
                cells.push(ResultCell {
                    policy: spec.to_string(),
                    budget,
                    metric,
                    mean,
                    std_err,
                    n_pairs: values.len(),
                    n_users,
                });
            }
        }
        scores.insert(spec.to_string(), by_budget);
    }

    Ok(ExperimentOutput {
        table: ResultTable {
            policies: config.policies.iter().map(|p| p.to_string()).collect(),
            budgets: budgets.clone(),
            metrics: config.metrics.clone(),
            targets: targets
                .iter()
                .map(|&t| data.question_ids[t].clone())
                .collect(),
            n_test_users: n_test,
            cells,
        },
        timings,
        pairs: PairScores {
            pairs: pairs.clone(),
            budgets,
            scores,
        },
        designs,
        prior_weights: prior.weights().iter().map(|w| w.to_f64_lossy()).collect(),
        em_trace,
        cat_traces,
    })
}
