use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{path}: line {line}: {message}")]
    Ingest { path: PathBuf, line: usize, message: String },

    #[error("{path}: {message}")]
    Labels { path: PathBuf, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("invalid anomaly plan: {0}")]
    Plan(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("not a checkpoint")]
    NotCheckpoint,

    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("corrupted checkpoint")]
    CorruptedCheckpoint,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
