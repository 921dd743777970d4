//! Item response theory baselines for computerized adaptive testing.

use thiserror::Error;

pub mod fit;
pub mod grid;
pub mod model;
mod optim;
pub mod session;

pub use fit::{fit_irt_em, IrtEmConfig, IrtFitTrace};
pub use grid::{GridConfig, TraitGrid};
pub use model::{IrtItem, IrtItemBank, IrtModelKind};
pub use session::{CatCriterion, CatModel, CatSession};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatError {
    #[error("invalid item bank: {0}")]
    InvalidBank(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid CAT configuration: {0}")]
    Config(String),
    #[error("training data has no observed responses")]
    EmptyTraining,
    #[error("no remaining items to administer")]
    NoRemainingItems,
    #[error("item {item} out of range for a bank of {n_items}")]
    ItemOutOfRange { item: usize, n_items: usize },
    #[error("item {0} was already administered")]
    AlreadyAdministered(usize),
    #[error("response {response} out of range for {n_categories} categories")]
    ResponseOutOfRange {
        response: usize,
        n_categories: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}
