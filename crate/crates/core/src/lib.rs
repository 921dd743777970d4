//! Bayesian adaptive querying of survey respondents under a finite persona
//! mixture prior, with dictionary transforms and IRT/CAT baselines.

pub mod cat;
pub mod dataset;
pub mod harness;
pub mod io;
mod parallel;
pub mod persona;
pub mod policy;
pub mod prior_fit;
pub mod rng;
pub mod scalar;
pub mod scoring;
pub mod transforms;

pub use cat::{CatCriterion, CatModel, CatSession, IrtItemBank, IrtModelKind};
pub use dataset::{ResponseDataset, SplitSpec};
pub use harness::{run_experiment, ExperimentConfig, ResultTable};
pub use io::TensorBundle;
pub use persona::{LikelihoodTensor, ModelError, PersonaPosterior, PersonaPrior, SessionState};
pub use policy::{PolicyError, PolicyKind};
pub use prior_fit::{EmConfig, EmTrace};
pub use scalar::Scalar;
pub use scoring::{ScoreRecord, ScoringError, UncertaintyKind};

pub type TensorF64 = LikelihoodTensor<f64>;
pub type TensorF32 = LikelihoodTensor<f32>;
pub type PriorF64 = PersonaPrior<f64>;
pub type PriorF32 = PersonaPrior<f32>;
pub type SessionF64 = SessionState<f64>;
pub type SessionF32 = SessionState<f32>;
pub type ItemBankF64 = IrtItemBank<f64>;
pub type ItemBankF32 = IrtItemBank<f32>;
