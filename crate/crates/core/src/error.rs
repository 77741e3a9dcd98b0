use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("duplicate key at line {line}: {key}")]
    DuplicateKey { line: usize, key: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("acquisition exhausted: no unevaluated configuration reachable")]
    Exhausted,

    #[error("invalid run configuration: {0}")]
    InvalidRun(String),

    #[error("state mismatch: {0}")]
    StateMismatch(String),

    #[error("run interrupted after {completed} observations (resume from {resume:?}): {source}")]
    Interrupted {
        completed: usize,
        resume: Option<PathBuf>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
