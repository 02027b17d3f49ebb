use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("empty batch: the estimator is undefined without samples")]
    EmptyBatch,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in sample {index}")]
    NonFinite { index: usize },

    #[error("degenerate batch: sample variance is zero")]
    ZeroVariance,

    #[error("true gradient is zero: relative error is undefined")]
    ZeroSignal,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("required sample size {0:e} does not fit in u64")]
    Overflow(f64),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}
