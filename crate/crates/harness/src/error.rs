use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Unparseable or invalid configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A sub-module rejected a record while the experiment ran.
    #[error("run failed: {0}")]
    Run(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for I/O, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Run(_) => 1,
        }
    }
}

impl From<rarity_core::Error> for HarnessError {
    fn from(e: rarity_core::Error) -> Self {
        use rarity_core::Error as E;
        match e {
            E::Invalid { .. } | E::Precondition(_) => HarnessError::Config(e.to_string()),
            other => HarnessError::Run(other.to_string()),
        }
    }
}

impl From<rarity_sim::Error> for HarnessError {
    fn from(e: rarity_sim::Error) -> Self {
        use rarity_sim::Error as E;
        match e {
            E::Invalid { .. } => HarnessError::Config(e.to_string()),
            E::Estimator(inner) => inner.into(),
            other => HarnessError::Run(other.to_string()),
        }
    }
}
