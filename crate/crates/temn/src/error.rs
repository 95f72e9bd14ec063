//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus handling, training, evaluation and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("unknown {kind} id: {id}")]
    Lookup { kind: &'static str, id: String },

    #[error("evaluation protocol error: {0}")]
    Protocol(String),

    #[error("model format version mismatch: expected {expected}, found {found}")]
    ModelVersion { expected: u32, found: u32 },

    #[error("corrupt model file: {0}")]
    ModelCorrupt(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
