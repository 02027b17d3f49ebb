//! Experiment harness: TOML configs in, run directories with tables and a
//! summary out.
//!
//! [`execute`] runs a parsed config on a dedicated thread pool; the `rarity`
//! binary adds argument parsing, overrides and output.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod summary;
pub mod table;

pub use config::{Experiment, ExperimentConfig, Format};
pub use error::{HarnessError, Result};
pub use run::ExperimentResult;
pub use summary::summarize;

/// Runs `config` on a pool of `config.jobs` threads (machine default when
/// unset). Results do not depend on the thread count.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = config.jobs {
        builder = builder.num_threads(jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::Run(format!("thread pool: {e}")))?;
    pool.install(|| run::run(config))
}
