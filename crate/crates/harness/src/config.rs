//! Experiment configuration files.
//!
//! One TOML file per experiment:
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [experiment]
//! kind = "longtail"
//! ...
//! ```
//!
//! Unknown keys are rejected everywhere, so a typo never silently falls back
//! to a default.

use std::path::{Path, PathBuf};

use rarity_core::{FilterDivisor, LongtailFamily, MixtureSpec};
use rarity_sim::{EnvConfig, TrainSettings, POLICY_DIM};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Master seed; every stream in the run is derived from it.
    pub seed: u64,
    /// Worker threads; the machine default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Parent directory for run directories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    VerifyTheorem(VerifyTheorem),
    SnrSweep(SnrSweep),
    Longtail(Longtail),
    IsDim(IsDim),
    GradCompare(GradCompare),
    Train(Train),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::VerifyTheorem(_) => "verify-theorem",
            Experiment::SnrSweep(_) => "snr-sweep",
            Experiment::Longtail(_) => "longtail",
            Experiment::IsDim(_) => "is-dim",
            Experiment::GradCompare(_) => "grad-compare",
            Experiment::Train(_) => "train",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub batch: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTheorem {
    pub spec: MixtureSpec,
    pub unbiasedness: Budget,
    /// `critical_count` turns the filtered estimator into the biased
    /// conditional mean; useful only as a negative control.
    #[serde(default)]
    pub divisor: FilterDivisor,
    pub variance: Budget,
    pub rho_factor: RhoFactorPlan,
    /// Random specs checked for closed-form ordering; 0 skips the sweep.
    #[serde(default)]
    pub closed_form_specs: usize,
}

/// Specs `independent_square(rho, mean_b, var_b)` for each `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoFactorPlan {
    pub rhos: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub var_b: f64,
    pub batch: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSweep {
    pub family: LongtailFamily,
    pub rhos: Vec<f64>,
    /// Samples per grid point.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Longtail {
    pub family: LongtailFamily,
    pub rho_min: f64,
    pub rho_max: f64,
    pub points: usize,
    pub relative_error: f64,
    pub confidence_z: f64,
    /// Absolute tolerance on the fitted log-log slopes (-2 and -1).
    pub slope_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsDim {
    pub shift: f64,
    pub dims: Vec<usize>,
    /// Draws per trial; each point uses `samples * trials` draws.
    pub samples: usize,
    pub trials: usize,
    /// Relative tolerance on the slope against `shift^2`.
    pub slope_rtol: f64,
    pub min_r2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<IsAnchor>,
}

/// A single point whose estimate must match `exp(dim * shift^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsAnchor {
    pub dim: usize,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCompare {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VariancePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OraclePlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariancePlan {
    pub env: EnvConfig,
    pub theta: [f64; POLICY_DIM],
    pub baseline: f64,
    pub batch: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OraclePlan {
    pub env: EnvConfig,
    pub theta: [f64; POLICY_DIM],
    pub baseline: f64,
    pub batch: usize,
    pub fd_episodes: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Train {
    pub env: EnvConfig,
    pub theta0: [f64; POLICY_DIM],
    pub settings: TrainSettings,
    /// When present, races full against window-filtered training instead of
    /// running `settings.mode` once.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<Race>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Race {
    pub seeds: usize,
    /// Fractional crash-rate reduction to reach, e.g. 0.5 halves it.
    pub target_reduction: f64,
    pub required_wins: usize,
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("invalid value for `{field}`: {reason}"))
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(invalid(field, "must be positive"));
    }
    Ok(())
}

fn increasing(field: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(invalid(field, "must not be empty"));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid(field, "must be strictly increasing"));
    }
    Ok(())
}

fn env_ok(field: &str, env: &EnvConfig) -> Result<()> {
    env.validate()
        .map_err(|e| HarnessError::Config(format!("{field}: {e}")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(String, Self)> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let config = Self::parse(&text)?;
        Ok((text, config))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Checks that do not need to run anything. Sub-modules validate the
    /// rest when the experiment starts.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(
                "version",
                format!("{} is not supported (expected {CONFIG_VERSION})", self.version),
            ));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs", "must be positive"));
        }
        match &self.experiment {
            Experiment::VerifyTheorem(v) => {
                positive("experiment.unbiasedness.batch", v.unbiasedness.batch)?;
                positive("experiment.variance.batch", v.variance.batch)?;
                if v.rho_factor.rhos.is_empty() {
                    return Err(invalid("experiment.rho_factor.rhos", "must not be empty"));
                }
            }
            Experiment::SnrSweep(s) => {
                increasing("experiment.rhos", &s.rhos)?;
                positive("experiment.samples", s.samples)?;
            }
            Experiment::Longtail(l) => {
                if !(l.rho_min > 0.0 && l.rho_min < l.rho_max) {
                    return Err(invalid("experiment.rho_min", "need 0 < rho_min < rho_max"));
                }
                if l.points < 2 {
                    return Err(invalid("experiment.points", "need at least 2"));
                }
                if !(l.slope_tolerance > 0.0) {
                    return Err(invalid("experiment.slope_tolerance", "must be positive"));
                }
            }
            Experiment::IsDim(i) => {
                let dims: Vec<f64> = i.dims.iter().map(|&d| d as f64).collect();
                increasing("experiment.dims", &dims)?;
                positive("experiment.samples", i.samples)?;
                positive("experiment.trials", i.trials)?;
            }
            Experiment::GradCompare(g) => {
                if g.variance.is_none() && g.oracle.is_none() {
                    return Err(invalid("experiment", "need a [variance] or [oracle] section"));
                }
                if let Some(v) = &g.variance {
                    env_ok("experiment.variance.env", &v.env)?;
                }
                if let Some(o) = &g.oracle {
                    env_ok("experiment.oracle.env", &o.env)?;
                }
            }
            Experiment::Train(t) => {
                env_ok("experiment.env", &t.env)?;
                t.settings
                    .validate()
                    .map_err(|e| HarnessError::Config(format!("experiment.settings: {e}")))?;
                if let Some(r) = &t.race {
                    positive("experiment.race.seeds", r.seeds)?;
                    if r.required_wins > r.seeds {
                        return Err(invalid("experiment.race.required_wins", "exceeds seeds"));
                    }
                }
            }
        }
        Ok(())
    }
}
