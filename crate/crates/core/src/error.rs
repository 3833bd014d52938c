use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage denominator is zero")]
    ZeroDenominator,

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("GP training set is empty")]
    EmptyTrainingSet,

    #[error("covariance factorization failed after jitter {jitter:e}")]
    IllConditioned { jitter: f64 },

    #[error("predictive variance {0:e} is negative beyond round-off")]
    NegativeVariance(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,

    #[error("count {count} outside 1..={max}")]
    CountOutOfRange { count: usize, max: usize },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("query budget exhausted: {0}")]
    BudgetExceeded(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("k = {k} outside 1..={vocab}")]
    KOutOfRange { k: usize, vocab: usize },

    #[error("token id {token_id} out of range for vocabulary of {vocab}")]
    TokenIdOutOfRange { token_id: usize, vocab: usize },

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("evaluation split is empty")]
    EmptySplit,

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn dims(expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch { expected, actual }
    }

    /// True for failures that originate at the black-box oracle.
    pub fn is_oracle_failure(&self) -> bool {
        matches!(self, Error::OracleUnavailable(_) | Error::BudgetExceeded(_))
    }
}
