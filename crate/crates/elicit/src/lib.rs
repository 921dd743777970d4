//! Elicitation of persona-conditioned answer distributions from a
//! chat-completion endpoint, with an append-only on-disk cache.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod cache;
pub mod client;
pub mod elicit;
pub mod parse;
pub mod prompts;

pub use cache::{Cache, CacheKey, ElicitationRecord, Parsed};
pub use client::{ApiConfig, ChatTransport, HttpTransport, TransportError};
pub use elicit::{
    elicit_modes, elicit_tensor, manifest_path, read_personas, read_questions, ElicitConfig,
    ElicitStats, ElicitedModes, ElicitedTensor, FailedPair, Manifest, PairId,
};
pub use parse::{parse_distribution, parse_mode, ParseError};
pub use prompts::{
    build_mode_prompt, build_prompt, PersonaProfile, Prompt, PromptKind, QuestionSpec,
};

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{failed} of {total} pairs failed after all retries; progress written to {}", manifest.display())]
    Exhausted {
        failed: usize,
        total: usize,
        manifest: PathBuf,
    },
    #[error(transparent)]
    Model(#[from] persona_core::persona::ModelError),
    #[error(transparent)]
    Transform(#[from] persona_core::transforms::TransformError),
    #[error(transparent)]
    Artifact(#[from] persona_core::io::IoError),
}

impl ElicitError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
