use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum KgError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid model file: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("score matrix contains NaN at ({row}, {col})")]
    NaN { row: usize, col: usize },

    #[error("not a valid ranking matrix: {0}")]
    InvalidRanking(String),

    #[error("invalid rounding factorization for slice {slice}: {message}")]
    InvalidFactorization { slice: usize, message: String },

    #[error("relation {0} has no training triples")]
    EmptyRelation(usize),

    #[error("no negative found for ({subject}, {relation}, {object}) after {attempts} attempts")]
    NegativeSampling {
        subject: usize,
        relation: usize,
        object: usize,
        attempts: usize,
    },

    #[error("eigendecomposition did not converge for slice {0}")]
    Eigen(usize),

    #[error("logistic regression needs both classes, got only label {0}")]
    SingleClass(u8),

    #[error("{0}")]
    Mismatch(String),
}

impl KgError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KgError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;
