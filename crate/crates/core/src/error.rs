use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("domain error in {func}: {msg}")]
    Domain { func: &'static str, msg: String },

    #[error("{solver} diverged at iteration {iteration}")]
    Divergence { solver: &'static str, iteration: usize },

    #[error("{solver} did not converge after {iterations} iterations")]
    NotConverged { solver: &'static str, iterations: usize },

    #[error("state is not converged; refusing to extract {0}")]
    Unconverged(&'static str),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("size guard: n*d = {size} exceeds limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column \"{column}\": {msg}")]
    Parse { row: usize, column: String, msg: String },

    #[error("target column \"{0}\" not found in header")]
    MissingColumn(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("linear solve failed: matrix is not positive definite")]
    Singular,

    #[error("experiment failed: {0}")]
    ExperimentFailed(String),
}

impl Error {
    pub(crate) fn domain(func: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain { func, msg: msg.into() }
    }
}
