use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum CoinError {
    #[error("{path}:{line}: source has {source_len} characters but target has {target_len}")]
    LengthMismatch {
        path: PathBuf,
        line: usize,
        source_len: usize,
        target_len: usize,
    },

    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid sentence pair: {0}")]
    InvalidPair(String),

    #[error("input of {len} tokens exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },

    #[error(
        "sentence of {chars} characters needs {required} corrector tokens but max_len is {max_len}; \
         split it into pieces of at most {max_chars} characters"
    )]
    SentenceTooLong {
        chars: usize,
        required: usize,
        max_len: usize,
        max_chars: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("unknown experiment id {0:?}")]
    UnknownExperiment(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoinError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoinError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CoinError> = std::result::Result<T, E>;
