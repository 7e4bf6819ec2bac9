use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A caller broke an operation's size or shape contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dissimilarity measure undefined: reference image has zero norm")]
    UndefinedMeasure,

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
