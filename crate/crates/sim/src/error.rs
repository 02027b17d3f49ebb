use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("trajectory {index} was generated by a different policy")]
    OffPolicy { index: usize },

    #[error("malformed trajectory: {0}")]
    Malformed(String),

    #[error(transparent)]
    Estimator(#[from] rarity_core::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}
