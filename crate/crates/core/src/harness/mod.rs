//! Experiment orchestration: configuration, the evaluation loop, reports and
//! an interactive single-respondent session.

pub mod config;
pub mod experiment;
pub mod interactive;
pub mod report;

use thiserror::Error;

use crate::cat::CatError;
use crate::dataset::DatasetError;
use crate::io::IoError;
use crate::persona::ModelError;
use crate::policy::PolicyError;
use crate::prior_fit::PriorFitError;
use crate::scoring::ScoringError;

pub use config::{
    Budget, DataSource, ExperimentConfig, Metric, PolicySpec, PriorSpec, SyntheticSpec,
};
pub use experiment::{
    choose_targets, design_nonadaptive_for, obtain_cat_model, prepare_data, run_experiment,
    run_on_data, synthesize, Design, ExperimentOutput, PairScores, PreparedData, ResultCell,
    ResultTable, Timings,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("terminal: {0}")]
    Terminal(#[from] std::io::Error),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    PriorFit(#[from] PriorFitError),
    #[error(transparent)]
    Cat(#[from] CatError),
}
