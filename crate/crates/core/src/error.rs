use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Broken internal bookkeeping, e.g. optimizer state that no longer
    /// matches its parameters.
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("format error in {file} at byte offset {offset}: {message}")]
    Format {
        file: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("missing checkpoint for {what}: {path}")]
    MissingCheckpoint { what: String, path: PathBuf },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("training log did not converge: {0}")]
    NotConverged(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
