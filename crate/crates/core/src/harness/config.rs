//! Declarative experiment description, read from JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cat::{CatCriterion, GridConfig, IrtEmConfig, IrtModelKind};
use crate::dataset::SplitSpec;
use crate::io::{read_json, IoError};
use crate::policy::DEFAULT_MC_SAMPLES;
use crate::prior_fit::EmConfig;
use crate::scoring::UncertaintyKind;

use super::HarnessError;

/// Number of queries per session, or every feasible question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Budget {
    Count(usize),
    All,
}

impl Budget {
    pub fn resolve(self, n_feasible: usize) -> Result<usize, HarnessError> {
        match self {
            Budget::All => Ok(n_feasible),
            Budget::Count(b) if b <= n_feasible => Ok(b),
            Budget::Count(b) => Err(HarnessError::Config(format!(
                "budget {b} exceeds the {n_feasible} feasible questions"
            ))),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Count(b) => write!(f, "{b}"),
            Budget::All => f.write_str("all"),
        }
    }
}

impl FromStr for Budget {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Budget::All);
        }
        s.parse()
            .map(Budget::Count)
            .map_err(|_| HarnessError::Config(format!("invalid budget {s:?}")))
    }
}

impl Serialize for Budget {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> Result<Ser::Ok, Ser::Error> {
        match self {
            Budget::Count(b) => serializer.serialize_u64(*b as u64),
            Budget::All => serializer.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(b) => Ok(Budget::Count(b)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A policy named in the config. CAT policies may carry a selection rule,
/// written `cat_grm:mfi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicySpec {
    Greedy,
    Nonadaptive,
    Random,
    RandomFixed,
    Full,
    Cat {
        model: IrtModelKind,
        criterion: Option<CatCriterion>,
    },
}

impl PolicySpec {
    pub fn is_cat(&self) -> bool {
        matches!(self, PolicySpec::Cat { .. })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Greedy => f.write_str("greedy"),
            PolicySpec::Nonadaptive => f.write_str("nonadaptive"),
            PolicySpec::Random => f.write_str("random"),
            PolicySpec::RandomFixed => f.write_str("random_fixed"),
            PolicySpec::Full => f.write_str("full"),
            PolicySpec::Cat { model, criterion } => {
                write!(f, "cat_{}", model.name())?;
                match criterion {
                    Some(CatCriterion::Mfi) => f.write_str(":mfi"),
                    Some(CatCriterion::Mepv) => f.write_str(":mepv"),
                    Some(CatCriterion::AOpt) => f.write_str(":a_opt"),
                    None => Ok(()),
                }
            }
        }
    }
}

impl FromStr for PolicySpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::Config(format!("unknown policy {s:?}"));
        Ok(match s {
            "greedy" => PolicySpec::Greedy,
            "nonadaptive" => PolicySpec::Nonadaptive,
            "random" => PolicySpec::Random,
            "random_fixed" => PolicySpec::RandomFixed,
            "full" => PolicySpec::Full,
            _ => {
                let rest = s.strip_prefix("cat_").ok_or_else(bad)?;
                let (model, criterion) = match rest.split_once(':') {
                    Some((m, c)) => (m, Some(c)),
                    None => (rest, None),
                };
                let model: IrtModelKind = model.parse().map_err(|_| bad())?;
                let criterion = match criterion {
                    None => None,
                    Some("mfi") => Some(CatCriterion::Mfi),
                    Some("mepv") => Some(CatCriterion::Mepv),
                    Some("a_opt") => Some(CatCriterion::AOpt),
                    Some(_) => return Err(bad()),
                };
                PolicySpec::Cat { model, criterion }
            }
        })
    }
}

impl Serialize for PolicySpec {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> Result<Ser::Ok, Ser::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicySpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Evaluation metric on the held-out targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LogLoss,
    Brier,
    OrdinalMse,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::LogLoss, Metric::Brier, Metric::OrdinalMse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LogLoss => "log_loss",
            Metric::Brier => "brier",
            Metric::OrdinalMse => "ordinal_mse",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// Synthetic dictionary and users generated on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_personas: usize,
    pub n_questions: usize,
    pub n_categories: usize,
    /// Symmetric Dirichlet parameter for every tensor row.
    pub concentration: f64,
    /// Total users before the train/test split.
    pub n_users: usize,
    /// Generating persona weights; uniform when absent.
    #[serde(default)]
    pub persona_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files { tensor: PathBuf, responses: PathBuf },
}

/// How the persona prior is obtained.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSpec {
    Uniform,
    /// Empirical Bayes on the training users.
    #[default]
    Em,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    /// Explicit target question ids; overrides `count`.
    pub ids: Option<Vec<String>>,
    pub count: usize,
    pub seed: u64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            ids: None,
            count: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatSpec {
    pub grid: GridConfig,
    pub em: IrtEmConfig,
    /// Latent dimension for the multidimensional models.
    pub dims: Option<usize>,
    /// Default selection rule; per-dimension default when absent.
    pub criterion: Option<CatCriterion>,
    /// Pre-fitted banks keyed by model name (`grm`, `gpcm`, `mgrm`, `mgpcm`).
    pub banks: BTreeMap<String, PathBuf>,
    /// Fit missing banks on the training users instead of failing.
    pub fit_inline: bool,
}

impl Default for CatSpec {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            em: IrtEmConfig::default(),
            dims: None,
            criterion: None,
            banks: BTreeMap::new(),
            fit_inline: true,
        }
    }
}

fn default_budgets() -> Vec<Budget> {
    [5, 10, 15, 20, 30, 50]
        .into_iter()
        .map(Budget::Count)
        .chain([Budget::All])
        .collect()
}

fn default_policies() -> Vec<PolicySpec> {
    vec![PolicySpec::Greedy, PolicySpec::Random]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub targets: TargetSpec,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<Budget>,
    #[serde(default)]
    pub uncertainty: UncertaintyKind,
    #[serde(default = "Metric::all_vec")]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub cat: CatSpec,
    /// Minimum probability applied to every tensor row before use.
    #[serde(default)]
    pub likelihood_floor: Option<f64>,
    #[serde(default)]
    pub split: SplitSpec,
    /// Evaluate only the first this-many test users.
    #[serde(default)]
    pub max_test_users: Option<usize>,
}

fn default_mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

impl Metric {
    fn all_vec() -> Vec<Metric> {
        Metric::ALL.to_vec()
    }
}

impl ExperimentConfig {
    pub fn new(data: DataSource) -> Self {
        Self {
            data,
            targets: TargetSpec::default(),
            policies: default_policies(),
            budgets: default_budgets(),
            uncertainty: UncertaintyKind::default(),
            metrics: Metric::all_vec(),
            seed: 0,
            mc_samples: DEFAULT_MC_SAMPLES,
            prior: PriorSpec::default(),
            em: EmConfig::default(),
            cat: CatSpec::default(),
            likelihood_floor: None,
            split: SplitSpec::default(),
            max_test_users: None,
        }
    }

    /// Reads a config and makes its relative paths relative to the file.
    pub fn from_file(path: &Path) -> Result<Self, IoError> {
        let mut config: Self = read_json(path)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Files { tensor, responses } = &mut self.data {
            fix(tensor);
            fix(responses);
        }
        if let PriorSpec::File(p) = &mut self.prior {
            fix(p);
        }
        self.cat.banks.values_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.policies.is_empty() {
            return Err(HarnessError::Config("no policies listed".into()));
        }
        if self.budgets.is_empty() {
            return Err(HarnessError::Config("no budgets listed".into()));
        }
        if self.metrics.is_empty() {
            return Err(HarnessError::Config("no metrics listed".into()));
        }
        if self.mc_samples == 0 {
            return Err(HarnessError::Config("mc_samples must be positive".into()));
        }
        if let Some(f) = self.likelihood_floor {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(HarnessError::Config(format!(
                    "invalid likelihood_floor {f}"
                )));
            }
        }
        for name in self.cat.banks.keys() {
            name.parse::<IrtModelKind>()
                .map_err(|_| HarnessError::Config(format!("unknown bank model {name:?}")))?;
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.policies {
            if !seen.insert(p.to_string()) {
                return Err(HarnessError::Config(format!("policy {p} listed twice")));
            }
        }
        self.em
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}
