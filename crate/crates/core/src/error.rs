use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// The record exists but carries no value for the requested datum.
    #[error("data unavailable: {0}")]
    DataUnavailable(String),

    #[error("vector index is empty")]
    EmptyIndex,

    #[error("provider error ({}): {message}", if *.retryable { "retryable" } else { "fatal" })]
    Provider { message: String, retryable: bool },

    #[error("queue at capacity ({0} pending jobs)")]
    Backpressure(usize),

    #[error("no question could be extracted from message {0}")]
    Unextractable(String),

    #[error("similarity undefined: {0}")]
    UndefinedInput(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn provider(msg: impl Into<String>, retryable: bool) -> Self {
        Error::Provider {
            message: msg.into(),
            retryable,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Provider { retryable: true, .. } | Error::Backpressure(_))
    }
}
