use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use persona_core::cat::{fit_irt_em, GridConfig, IrtEmConfig};
use persona_core::dataset::{import_survey, split_users, ImportReport, ImportRules};
use persona_core::harness::interactive::{InteractiveSetup, Transcript};
use persona_core::harness::report::{render_csv, render_text};
use persona_core::harness::{
    choose_targets, design_nonadaptive_for, prepare_data, run_on_data, synthesize, Budget,
    ExperimentConfig, PolicySpec, PriorSpec, SyntheticSpec,
};
use persona_core::io::{
    load_responses, load_tensor_fast, read_json, read_survey_csv, save_responses, save_tensor,
    write_json, BankFile, ModesFile, PriorFile, TensorBundle,
};
use persona_core::prior_fit::fit_prior_em;
use persona_core::transforms::{
    cluster_dictionary, deterministic_with_noise, temperature_scale, ClusterConfig, ModeTable,
};
use persona_core::{
    EmConfig, EmTrace, IrtModelKind, PersonaPrior, ResultTable, SplitSpec, TensorF64,
    UncertaintyKind,
};
use persona_elicit::{
    elicit_modes, elicit_tensor, read_personas, read_questions, ApiConfig, Cache, ElicitConfig,
    HttpTransport,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Common, TransformOp};

/// Joins relative paths of a command config onto the config's directory.
trait Rebase {
    fn rebase(&mut self, base: &Path);
}

fn fix(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn fix_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        fix(base, p);
    }
}

fn load_config<T: DeserializeOwned + Rebase>(
    common: &Common,
    default: impl FnOnce() -> T,
) -> Result<T> {
    match &common.config {
        Some(path) => {
            let mut config: T = read_json(path)?;
            if let Some(base) = path.parent() {
                config.rebase(base);
            }
            Ok(config)
        }
        None => Ok(default()),
    }
}

fn load_experiment(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(path) => Ok(ExperimentConfig::from_file(path)?),
        None => bail!("this command needs an experiment config: pass --config <file>"),
    }
}

/// Prints the config when asked; returns true when the command should stop.
fn print_config<T: Serialize>(common: &Common, config: &T) -> Result<bool> {
    if common.print_config {
        println!("{}", serde_json::to_string_pretty(config)?);
    }
    Ok(common.print_config)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_prior_file(path: Option<&Path>, bundle: &TensorBundle<f64>) -> Result<PersonaPrior<f64>> {
    let Some(path) = path else {
        return Ok(PersonaPrior::uniform(bundle.tensor.n_personas()));
    };
    let file: PriorFile = read_json(path)?;
    if file.tensor_sha256 != bundle.hash() {
        bail!("prior {} was fitted for a different tensor", path.display());
    }
    let prior = file.prior::<f64>()?;
    if prior.len() != bundle.tensor.n_personas() {
        bail!(
            "prior {} has {} personas, tensor has {}",
            path.display(),
            prior.len(),
            bundle.tensor.n_personas()
        );
    }
    Ok(prior)
}

// ---------------------------------------------------------------- elicit

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElicitFileConfig {
    /// JSON lines of `{persona_id, profile_text}`.
    pub personas: PathBuf,
    /// JSON lines of `{question_id, question_text, n_categories, labels?}`.
    pub questions: PathBuf,
    pub api: ApiConfig,
    pub elicit: ElicitConfig,
    pub cache_dir: PathBuf,
    pub output: PathBuf,
    /// Ask for the single most likely answer instead of a distribution.
    pub modes: bool,
}

impl Default for ElicitFileConfig {
    fn default() -> Self {
        Self {
            personas: "personas.jsonl".into(),
            questions: "questions.jsonl".into(),
            api: ApiConfig::default(),
            elicit: ElicitConfig::default(),
            cache_dir: "cache".into(),
            output: "tensor.jsonl".into(),
            modes: false,
        }
    }
}

impl Rebase for ElicitFileConfig {
    fn rebase(&mut self, base: &Path) {
        fix(base, &mut self.personas);
        fix(base, &mut self.questions);
        fix(base, &mut self.cache_dir);
        fix(base, &mut self.output);
    }
}

#[derive(Args, Debug)]
pub struct ElicitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    personas: Option<PathBuf>,
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Endpoint base URL; requests go to `<url>/chat/completions`.
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API token.
    #[arg(long)]
    token_env: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    retries: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Tensor (or, with --modes, mode table) output path.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    modes: bool,
}

pub fn elicit(a: ElicitArgs) -> Result<()> {
    let mut c = load_config(&a.common, ElicitFileConfig::default)?;
    set(&mut c.personas, a.personas);
    set(&mut c.questions, a.questions);
    set(&mut c.api.base_url, a.base_url);
    set(&mut c.api.model, a.model);
    set(&mut c.api.token_env, a.token_env);
    set(&mut c.elicit.concurrency, a.concurrency);
    set(&mut c.elicit.retries, a.retries);
    set(&mut c.cache_dir, a.cache_dir);
    set(&mut c.output, a.output);
    c.modes |= a.modes;
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let personas = read_personas(&c.personas)?;
    let questions = read_questions(&c.questions)?;
    let transport = HttpTransport::new(c.api.clone())?;
    let mut cache = Cache::open(&c.cache_dir)?;
    let model_key = c.api.model_key();
    let stats = if c.modes {
        let out = elicit_modes(
            &personas, &questions, &transport, &model_key, &mut cache, &c.elicit,
        )?;
        write_json(
            &c.output,
            &ModesFile {
                persona_ids: out.persona_ids,
                question_ids: out.question_ids,
                table: out.modes,
            },
        )?;
        out.stats
    } else {
        let out = elicit_tensor::<f64>(
            &personas, &questions, &transport, &model_key, &mut cache, &c.elicit,
        )?;
        save_tensor(&out.bundle, &c.output)?;
        out.stats
    };
    println!(
        "{} pairs: {} from cache, {} requests; wrote {}",
        stats.pairs,
        stats.cache_hits,
        stats.network_calls,
        c.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- gen-synthetic

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub synthetic: SyntheticSpec,
    pub tensor: PathBuf,
    pub responses: PathBuf,
    /// Generating persona of every user.
    pub truth: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec {
                n_personas: 50,
                n_questions: 30,
                n_categories: 4,
                concentration: 0.5,
                n_users: 10_000,
                persona_weights: None,
                seed: 0,
            },
            tensor: "tensor.jsonl".into(),
            responses: "responses.csv".into(),
            truth: None,
        }
    }
}

impl Rebase for GenConfig {
    fn rebase(&mut self, base: &Path) {
        fix(base, &mut self.tensor);
        fix(base, &mut self.responses);
        fix_opt(base, &mut self.truth);
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n_personas: Option<usize>,
    #[arg(long)]
    n_questions: Option<usize>,
    #[arg(long)]
    n_categories: Option<usize>,
    /// Symmetric Dirichlet parameter of every row.
    #[arg(long)]
    concentration: Option<f64>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Serialize)]
struct Truth {
    persona_weights: Vec<f64>,
    true_personas: Vec<usize>,
}

pub fn gen_synthetic(a: GenArgs) -> Result<()> {
    let mut c = load_config(&a.common, GenConfig::default)?;
    let s = &mut c.synthetic;
    set(&mut s.n_personas, a.n_personas);
    set(&mut s.n_questions, a.n_questions);
    set(&mut s.n_categories, a.n_categories);
    set(&mut s.concentration, a.concentration);
    set(&mut s.n_users, a.n_users);
    set(&mut s.seed, a.seed);
    set(&mut c.tensor, a.tensor);
    set(&mut c.responses, a.responses);
    if a.truth.is_some() {
        c.truth = a.truth;
    }
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let (tensor, prior, users) = synthesize::<f64>(&c.synthetic)?;
    save_tensor(&TensorBundle::with_default_ids(tensor), &c.tensor)?;
    save_responses(&users.dataset, &c.responses)?;
    if let Some(path) = &c.truth {
        write_json(
            path,
            &Truth {
                persona_weights: prior.weights().to_vec(),
                true_personas: users.true_personas,
            },
        )?;
    }
    println!("wrote {} and {}", c.tensor.display(), c.responses.display());
    Ok(())
}

// ---------------------------------------------------------------- fit-prior

fn default_split() -> Option<SplitSpec> {
    Some(SplitSpec::default())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitPriorConfig {
    pub tensor: PathBuf,
    pub responses: PathBuf,
    pub em: EmConfig,
    /// Fit on the training part of this split; `null` uses every user.
    #[serde(default = "default_split")]
    pub split: Option<SplitSpec>,
    pub likelihood_floor: Option<f64>,
    pub output: PathBuf,
}

impl Default for FitPriorConfig {
    fn default() -> Self {
        Self {
            tensor: "tensor.jsonl".into(),
            responses: "responses.csv".into(),
            em: EmConfig::default(),
            split: default_split(),
            likelihood_floor: None,
            output: "prior.json".into(),
        }
    }
}

impl Rebase for FitPriorConfig {
    fn rebase(&mut self, base: &Path) {
        fix(base, &mut self.tensor);
        fix(base, &mut self.responses);
        fix(base, &mut self.output);
    }
}

#[derive(Args, Debug)]
pub struct FitPriorArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Fit on every user instead of the training split.
    #[arg(long)]
    all_users: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn training_users(
    responses: &Path,
    split: Option<&SplitSpec>,
) -> Result<persona_core::ResponseDataset> {
    let users = load_responses(responses)?;
    Ok(match split {
        Some(s) => split_users(&users, s)?.0,
        None => users,
    })
}

pub fn fit_prior(a: FitPriorArgs) -> Result<()> {
    let mut c = load_config(&a.common, FitPriorConfig::default)?;
    set(&mut c.tensor, a.tensor);
    set(&mut c.responses, a.responses);
    set(&mut c.em.max_iters, a.max_iters);
    set(&mut c.em.tol, a.tol);
    set(&mut c.output, a.output);
    if a.all_users {
        c.split = None;
    }
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let bundle = load_tensor_fast::<f64>(&c.tensor)?;
    let train = training_users(&c.responses, c.split.as_ref())?;
    if train.question_ids() != bundle.question_ids.as_slice() {
        bail!(
            "question ids of {} differ from those of {}",
            c.responses.display(),
            c.tensor.display()
        );
    }
    let tensor = match c.likelihood_floor {
        Some(f) if f > 0.0 => bundle.tensor.floored(f),
        _ => bundle.tensor.clone(),
    };
    let (prior, trace): (_, EmTrace) = fit_prior_em(&train, &tensor, &c.em)?;
    write_json(
        &c.output,
        &PriorFile {
            weights: prior.weights().to_vec(),
            persona_ids: bundle.persona_ids.clone(),
            tensor_sha256: bundle.hash(),
            em_config: Some(c.em),
            trace: Some(trace.clone()),
        },
    )?;
    println!(
        "{} iterations, log-likelihood {:.4} -> {:.4}; wrote {}",
        trace.iterations,
        trace.log_likelihoods[0],
        trace.final_log_likelihood(),
        c.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- fit-cat

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCatConfig {
    pub responses: PathBuf,
    pub model: IrtModelKind,
    /// Latent dimension of the multidimensional models.
    pub dims: Option<usize>,
    pub grid: GridConfig,
    pub em: IrtEmConfig,
    #[serde(default = "default_split")]
    pub split: Option<SplitSpec>,
    pub output: PathBuf,
}

impl Default for FitCatConfig {
    fn default() -> Self {
        Self {
            responses: "responses.csv".into(),
            model: IrtModelKind::Grm,
            dims: None,
            grid: GridConfig::default(),
            em: IrtEmConfig::default(),
            split: default_split(),
            output: "bank.json".into(),
        }
    }
}

impl Rebase for FitCatConfig {
    fn rebase(&mut self, base: &Path) {
        fix(base, &mut self.responses);
        fix(base, &mut self.output);
    }
}

#[derive(Args, Debug)]
pub struct FitCatArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    responses: Option<PathBuf>,
    /// grm, gpcm, mgrm or mgpcm.
    #[arg(long)]
    model: Option<IrtModelKind>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    all_users: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

pub fn fit_cat(a: FitCatArgs) -> Result<()> {
    let mut c = load_config(&a.common, FitCatConfig::default)?;
    set(&mut c.responses, a.responses);
    set(&mut c.model, a.model);
    if a.dims.is_some() {
        c.dims = a.dims;
    }
    set(&mut c.em.max_iters, a.max_iters);
    set(&mut c.output, a.output);
    if a.all_users {
        c.split = None;
    }
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let train = training_users(&c.responses, c.split.as_ref())?;
    let dims = if c.model.is_multidimensional() {
        c.dims.unwrap_or(c.model.default_dims())
    } else {
        1
    };
    let (bank, _, trace) = fit_irt_em::<f64>(&train, c.model, dims, &c.grid, &c.em)?;
    write_json(
        &c.output,
        &BankFile {
            bank,
            question_ids: train.question_ids().to_vec(),
            grid: c.grid,
            trace: Some(trace.clone()),
        },
    )?;
    println!(
        "fitted {} items; wrote {}",
        train.n_questions(),
        c.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterFileConfig {
    pub tensor: PathBuf,
    /// Prior file; uniform when absent.
    pub prior: Option<PathBuf>,
    pub cluster: ClusterConfig,
    pub tensor_out: PathBuf,
    pub prior_out: PathBuf,
    /// Cluster of each original persona.
    pub assignment_out: Option<PathBuf>,
}

impl Default for ClusterFileConfig {
    fn default() -> Self {
        Self {
            tensor: "tensor.jsonl".into(),
            prior: None,
            cluster: ClusterConfig::new(10),
            tensor_out: "clustered.jsonl".into(),
            prior_out: "clustered_prior.json".into(),
            assignment_out: None,
        }
    }
}

impl Rebase for ClusterFileConfig {
    fn rebase(&mut self, base: &Path) {
        fix(base, &mut self.tensor);
        fix_opt(base, &mut self.prior);
        fix(base, &mut self.tensor_out);
        fix(base, &mut self.prior_out);
        fix_opt(base, &mut self.assignment_out);
    }
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    n_clusters: Option<usize>,
    /// Prior mass of the rarest personas to drop before clustering.
    #[arg(long)]
    prune_mass: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tensor_out: Option<PathBuf>,
    #[arg(long)]
    prior_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Assignment<'a> {
    persona_ids: &'a [String],
    cluster: &'a [Option<usize>],
    objective_trace: &'a [f64],
}

pub fn cluster(a: ClusterArgs) -> Result<()> {
    let mut c = load_config(&a.common, ClusterFileConfig::default)?;
    set(&mut c.tensor, a.tensor);
    if a.prior.is_some() {
        c.prior = a.prior;
    }
    set(&mut c.cluster.n_clusters, a.n_clusters);
    set(&mut c.cluster.prune_mass, a.prune_mass);
    set(&mut c.cluster.seed, a.seed);
    set(&mut c.tensor_out, a.tensor_out);
    set(&mut c.prior_out, a.prior_out);
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let bundle = load_tensor_fast::<f64>(&c.tensor)?;
    let prior = load_prior_file(c.prior.as_deref(), &bundle)?;
    let out = cluster_dictionary(&bundle.tensor, &prior, &c.cluster)?;
    let clustered = TensorBundle {
        persona_ids: (0..out.prior.len()).map(|i| format!("c{i}")).collect(),
        question_ids: bundle.question_ids.clone(),
        tensor: out.tensor,
    };
    save_tensor(&clustered, &c.tensor_out)?;
    write_json(
        &c.prior_out,
        &PriorFile {
            weights: out.prior.weights().to_vec(),
            persona_ids: clustered.persona_ids.clone(),
            tensor_sha256: clustered.hash(),
            em_config: None,
            trace: None,
        },
    )?;
    if let Some(path) = &c.assignment_out {
        write_json(
            path,
            &Assignment {
                persona_ids: &bundle.persona_ids,
                cluster: &out.assignment,
                objective_trace: &out.objective_trace,
            },
        )?;
    }
    println!(
        "{} personas -> {} prototypes; wrote {}",
        bundle.persona_ids.len(),
        clustered.persona_ids.len(),
        c.tensor_out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- transform

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub tensor: Option<PathBuf>,
    /// Mode table from `elicit --modes`; takes precedence over the tensor
    /// argmax for det-noise.
    pub modes: Option<PathBuf>,
    pub tau: f64,
    pub epsilon: f64,
    pub output: PathBuf,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            tensor: None,
            modes: None,
            tau: 1.0,
            epsilon: 0.1,
            output: "transformed.jsonl".into(),
        }
    }
}

impl Rebase for TransformConfig {
    fn rebase(&mut self, base: &Path) {
        fix_opt(base, &mut self.tensor);
        fix_opt(base, &mut self.modes);
        fix(base, &mut self.output);
    }
}

#[derive(Args, Debug)]
pub struct TransformArgs {
    #[arg(value_enum)]
    op: TransformOp,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long)]
    modes: Option<PathBuf>,
    /// Temperature; 1 leaves the tensor unchanged.
    #[arg(long)]
    tau: Option<f64>,
    /// Mass spread evenly over the non-modal categories.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

pub fn transform(a: TransformArgs) -> Result<()> {
    let mut c = load_config(&a.common, TransformConfig::default)?;
    if a.tensor.is_some() {
        c.tensor = a.tensor;
    }
    if a.modes.is_some() {
        c.modes = a.modes;
    }
    set(&mut c.tau, a.tau);
    set(&mut c.epsilon, a.epsilon);
    set(&mut c.output, a.output);
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let out: TensorBundle<f64> = match a.op {
        TransformOp::Temperature => {
            let Some(path) = &c.tensor else {
                bail!("temperature scaling needs --tensor");
            };
            let bundle = load_tensor_fast::<f64>(path)?;
            TensorBundle {
                tensor: temperature_scale(&bundle.tensor, c.tau)?,
                ..bundle
            }
        }
        TransformOp::DetNoise => {
            let (persona_ids, question_ids, table) = match (&c.modes, &c.tensor) {
                (Some(path), _) => {
                    let f: ModesFile = read_json(path)?;
                    (f.persona_ids, f.question_ids, f.table)
                }
                (None, Some(path)) => {
                    let b = load_tensor_fast::<f64>(path)?;
                    let table = ModeTable::from_argmax(&b.tensor);
                    (b.persona_ids, b.question_ids, table)
                }
                (None, None) => bail!("det-noise needs --modes or --tensor"),
            };
            let tensor: TensorF64 = deterministic_with_noise(&table, c.epsilon)?;
            TensorBundle {
                persona_ids,
                question_ids,
                tensor,
            }
        }
    };
    save_tensor(&out, &c.output)?;
    println!("wrote {}", c.output.display());
    Ok(())
}

// ---------------------------------------------------------------- experiment overrides

#[derive(Args, Debug, Default)]
pub struct ExperimentOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Comma-separated, e.g. `greedy,random,cat_grm:mepv`.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<PolicySpec>>,
    /// Comma-separated, e.g. `5,10,all`.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<Budget>>,
    /// uniform, em, or a prior file path.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    max_test_users: Option<usize>,
    #[arg(long)]
    likelihood_floor: Option<f64>,
}

impl ExperimentOverrides {
    fn apply(self, c: &mut ExperimentConfig) {
        set(&mut c.seed, self.seed);
        set(&mut c.mc_samples, self.mc_samples);
        set(&mut c.policies, self.policies);
        set(&mut c.budgets, self.budgets);
        if let Some(p) = self.prior {
            c.prior = match p.as_str() {
                "uniform" => PriorSpec::Uniform,
                "em" => PriorSpec::Em,
                path => PriorSpec::File(path.into()),
            };
        }
        if self.max_test_users.is_some() {
            c.max_test_users = self.max_test_users;
        }
        if self.likelihood_floor.is_some() {
            c.likelihood_floor = self.likelihood_floor;
        }
    }
}

// ---------------------------------------------------------------- design

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: ExperimentOverrides,
    /// Length of the question list (a count or `all`).
    #[arg(long, default_value = "10")]
    budget: Budget,
    /// Write the design JSON here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

pub fn design(a: DesignArgs) -> Result<()> {
    let mut c = load_experiment(&a.common)?;
    a.overrides.apply(&mut c);
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    c.validate()?;
    let data = prepare_data::<f64>(&c)?;
    let design = design_nonadaptive_for(&c, &data, a.budget)?;
    match &a.output {
        Some(path) => {
            write_json(path, &design)?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&design)?),
    }
    Ok(())
}

// ---------------------------------------------------------------- run

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: ExperimentOverrides,
    /// Directory for results.json, results.csv and run.json.
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Skip the text tables on stdout.
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    output: &'a persona_core::harness::ExperimentOutput,
}

pub fn run(a: RunArgs) -> Result<()> {
    let mut c = load_experiment(&a.common)?;
    a.overrides.apply(&mut c);
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    c.validate()?;
    let data = prepare_data::<f64>(&c)?;
    let output = run_on_data(&c, &data)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_json(&a.out_dir.join("results.json"), &output.table)?;
    let csv_path = a.out_dir.join("results.csv");
    std::fs::write(&csv_path, render_csv(&output.table))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    write_json(
        &a.out_dir.join("run.json"),
        &RunRecord {
            config: &c,
            output: &output,
        },
    )?;
    if !a.quiet {
        print!("{}", render_text(&output.table));
    }
    Ok(())
}

// ---------------------------------------------------------------- interactive

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractiveConfig {
    pub tensor: PathBuf,
    pub prior: Option<PathBuf>,
    /// Question texts as JSON lines (the elicitation question file).
    pub questions: Option<PathBuf>,
    pub targets: persona_core::harness::config::TargetSpec,
    pub budget: Budget,
    pub uncertainty: UncertaintyKind,
    pub likelihood_floor: Option<f64>,
    pub top: usize,
    pub transcript: PathBuf,
}

impl Default for InteractiveConfig {
    fn default() -> Self {
        Self {
            tensor: "tensor.jsonl".into(),
            prior: None,
            questions: None,
            targets: Default::default(),
            budget: Budget::Count(10),
            uncertainty: UncertaintyKind::default(),
            likelihood_floor: None,
            top: 5,
            transcript: "transcript.json".into(),
        }
    }
}

impl Rebase for InteractiveConfig {
    fn rebase(&mut self, base: &Path) {
        fix(base, &mut self.tensor);
        fix_opt(base, &mut self.prior);
        fix_opt(base, &mut self.questions);
        fix(base, &mut self.transcript);
    }
}

#[derive(Args, Debug)]
pub struct InteractiveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    questions: Option<PathBuf>,
    #[arg(long)]
    budget: Option<Budget>,
    #[arg(long)]
    transcript: Option<PathBuf>,
}

pub fn interactive(a: InteractiveArgs) -> Result<()> {
    let mut c = load_config(&a.common, InteractiveConfig::default)?;
    set(&mut c.tensor, a.tensor);
    if a.prior.is_some() {
        c.prior = a.prior;
    }
    if a.questions.is_some() {
        c.questions = a.questions;
    }
    set(&mut c.budget, a.budget);
    set(&mut c.transcript, a.transcript);
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let bundle = load_tensor_fast::<f64>(&c.tensor)?;
    let prior = load_prior_file(c.prior.as_deref(), &bundle)?;
    let tensor = match c.likelihood_floor {
        Some(f) if f > 0.0 => bundle.tensor.floored(f),
        _ => bundle.tensor.clone(),
    };
    let question_texts: BTreeMap<String, String> = match &c.questions {
        Some(path) => read_questions(path)?
            .into_iter()
            .map(|q| {
                let text = q.rendered();
                (q.question_id, text)
            })
            .collect(),
        None => BTreeMap::new(),
    };
    let targets = choose_targets(&bundle.question_ids, &c.targets)?;
    let feasible: Vec<usize> = (0..tensor.n_questions())
        .filter(|q| !targets.contains(q))
        .collect();
    let budget = c.budget.resolve(feasible.len())?;
    let setup = InteractiveSetup {
        tensor,
        prior,
        persona_ids: bundle.persona_ids,
        question_ids: bundle.question_ids,
        question_texts,
        targets,
        feasible,
        kind: c.uncertainty,
        budget,
        top: c.top,
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let transcript: Transcript =
        setup.run(&mut stdin.lock(), &mut BufWriter::new(stdout.lock()))?;
    write_json(&c.transcript, &transcript)?;
    eprintln!("transcript written to {}", c.transcript.display());
    Ok(())
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub input: PathBuf,
    pub csv: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            input: "results/results.json".into(),
            csv: false,
        }
    }
}

impl Rebase for ReportConfig {
    fn rebase(&mut self, base: &Path) {
        fix(base, &mut self.input);
    }
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// results.json written by `run`.
    input: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    csv: bool,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut c = load_config(&a.common, ReportConfig::default)?;
    set(&mut c.input, a.input);
    c.csv |= a.csv;
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let table: ResultTable = read_json(&c.input)?;
    let text = if c.csv {
        render_csv(&table)
    } else {
        render_text(&table)
    };
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------- import

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportConfig {
    pub survey: PathBuf,
    pub id_column: String,
    pub rules: ImportRules,
    pub output: PathBuf,
    pub report: Option<PathBuf>,
}

impl Default for ImportConfig {
    fn default() -> Self {
        Self {
            survey: "survey.csv".into(),
            id_column: "user_id".into(),
            rules: ImportRules::default(),
            output: "responses.csv".into(),
            report: None,
        }
    }
}

impl Rebase for ImportConfig {
    fn rebase(&mut self, base: &Path) {
        fix(base, &mut self.survey);
        fix(base, &mut self.output);
        fix_opt(base, &mut self.report);
    }
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    survey: Option<PathBuf>,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    n_categories: Option<usize>,
    #[arg(long)]
    max_missing_fraction: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn import(a: ImportArgs) -> Result<()> {
    let mut c = load_config(&a.common, ImportConfig::default)?;
    set(&mut c.survey, a.survey);
    set(&mut c.id_column, a.id_column);
    set(&mut c.rules.n_categories, a.n_categories);
    set(&mut c.rules.max_missing_fraction, a.max_missing_fraction);
    set(&mut c.output, a.output);
    if a.report.is_some() {
        c.report = a.report;
    }
    if print_config(&a.common, &c)? {
        return Ok(());
    }
    let raw = read_survey_csv(&c.survey, &c.id_column)?;
    let (dataset, report): (_, ImportReport) =
        import_survey(raw.user_ids, raw.question_ids, &raw.values, &c.rules)?;
    save_responses(&dataset, &c.output)?;
    if let Some(path) = &c.report {
        write_json(path, &report)?;
    }
    println!(
        "kept {} questions and {} users (dropped {} and {}); wrote {}",
        report.kept_questions,
        report.kept_users,
        report.dropped_questions.len(),
        report.dropped_users.len(),
        c.output.display()
    );
    Ok(())
}
