use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("operation requires mode {expected}, params are {actual}")]
    WrongMode {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: {detail}"
    )]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch { expected, actual }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
