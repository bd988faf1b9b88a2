use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LbgmError>;

#[derive(Debug, Error)]
pub enum LbgmError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("line {line}: non-numeric {field} value `{value}`")]
    NonNumeric {
        line: u64,
        field: &'static str,
        value: String,
    },

    #[error("line {line}: wave index must be a positive integer, got `{value}`")]
    BadWave { line: u64, value: String },

    #[error("duplicate row for id `{id}`, outcome `{outcome}`, wave {wave}")]
    DuplicateRow {
        id: String,
        outcome: String,
        wave: usize,
    },

    #[error("times not increasing for id `{id}`, outcome `{outcome}` at wave {wave}")]
    NonMonotoneTime {
        id: String,
        outcome: String,
        wave: usize,
    },

    #[error("sample failed validation:\n{0}")]
    Invalid(String),

    #[error("outcome `{0}` is not present in the data")]
    UnknownOutcome(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("loading matrix: {0}")]
    Loading(String),

    #[error("covariance for individual `{id}` is not positive definite")]
    NotPositiveDefinite { id: String },

    #[error("invalid parameters: {0}")]
    Parameters(String),

    #[error("degenerate rescaling: relative rate of interval {interval} is zero")]
    DegenerateScaling { interval: usize },

    #[error("fixed interval {interval} of outcome `{outcome}` is not observable in the data")]
    FixedIntervalUnobservable { outcome: String, interval: usize },

    #[error("non-finite deviance at a finite-difference stencil point (parameter {index})")]
    NonFiniteStencil { index: usize },

    #[error("estimation failed after {attempts} attempts")]
    RetriesExhausted { attempts: usize },

    #[error("parameter covariance matrix is unavailable")]
    VcovUnavailable,

    #[error("{0}")]
    Derived(String),

    #[error("invalid simulation design: {0}")]
    Design(String),

    #[error("invalid metric input: {0}")]
    Metric(String),

    #[error("config parse error: {0}")]
    Config(String),
}

impl LbgmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LbgmError::Io {
            path: path.into(),
            source,
        }
    }
}
