use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("year {0} is not present in the relevance matrix")]
    YearNotFound(i32),

    #[error("degenerate embedding at batch index {index}: pre-normalization vector is zero")]
    DegenerateEmbedding { index: usize },

    #[error("index is empty")]
    EmptyIndex,

    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("schema error at line {line}: expected {expected} features, found {found}")]
    Schema {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} invalid record(s); first: {1}")]
    InvalidRecords(usize, String),

    #[error("numeric failure at iteration {iteration}: {message}")]
    NumericFailure { iteration: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
