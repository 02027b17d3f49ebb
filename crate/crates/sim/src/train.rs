//! Plain gradient ascent on expected return.
//!
//! Iteration `k` rolls out a batch from the seed `(seed, k)`, so two runs with
//! the same seed but different gradient modes see identical environment and
//! action randomness until their policies diverge. Crash rates are evaluated
//! on forced conflicts drawn from a stream shared across modes.

use rarity_core::estimator::GradientEstimate;
use rarity_core::rng::{derive_seed, label_key};
use serde::{Deserialize, Serialize};

use crate::env::{conditional_crash_rate, run_batch, EnvConfig, Outcome, PolicyParams, POLICY_DIM};
use crate::error::{Error, Result};
use crate::gradient::{reinforce_gradient, GradientMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    /// Mean return of the previous iteration's batch (0 on the first).
    RunningMean,
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub mode: GradientMode,
    pub baseline: Baseline,
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Forced-conflict episodes per crash-rate evaluation; 0 uses the
    /// training batch's crash fraction instead.
    pub eval_episodes: usize,
    /// Training stops once `|theta|` exceeds this.
    pub max_theta_norm: f64,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be finite and nonnegative"));
        }
        if !(self.max_theta_norm > 0.0) {
            return Err(Error::invalid("max_theta_norm", "must be positive"));
        }
        if let Baseline::Constant { value } = self.baseline {
            if !value.is_finite() {
                return Err(Error::invalid("baseline", "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub iteration: usize,
    pub theta: [f64; POLICY_DIM],
    pub crash_rate: f64,
    /// Fields below are absent on the final evaluation-only point.
    pub critical_fraction: Option<f64>,
    pub baseline: Option<f64>,
    pub gradient: Option<GradientEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainingStatus {
    Completed,
    Diverged { iteration: usize, theta_norm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub mode: GradientMode,
    pub seed: u64,
    pub points: Vec<LearningPoint>,
    pub status: TrainingStatus,
}

impl LearningCurve {
    pub fn initial_crash_rate(&self) -> f64 {
        self.points[0].crash_rate
    }

    pub fn final_crash_rate(&self) -> f64 {
        self.points.last().expect("curve has points").crash_rate
    }

    /// First iteration whose evaluated crash rate is at most `target`.
    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.points
            .iter()
            .find(|p| p.crash_rate <= target)
            .map(|p| p.iteration)
    }
}

fn evaluate(
    config: &EnvConfig,
    policy: &PolicyParams,
    eval_episodes: usize,
    eval_seed: u64,
) -> Result<f64> {
    if config.conflict_prob == 0.0 {
        return Ok(0.0);
    }
    let conditional = conditional_crash_rate(config, policy, eval_episodes, eval_seed)?;
    Ok(config.conflict_prob * conditional.rate)
}

pub fn train(
    config: &EnvConfig,
    policy0: &PolicyParams,
    settings: &TrainSettings,
    seed: u64,
) -> Result<LearningCurve> {
    config.validate()?;
    policy0.validate()?;
    settings.validate()?;
    let eval_root = derive_seed(seed, &[label_key("crash-rate-eval")]);
    let mut policy = *policy0;
    let mut points = Vec::with_capacity(settings.iterations + 1);
    let mut previous_mean_return = 0.0;
    let mut status = TrainingStatus::Completed;

    for it in 0..settings.iterations {
        let trajs = run_batch(config, &policy, settings.batch, derive_seed(seed, &[it as u64]))?;
        let crashes = trajs.iter().filter(|t| t.outcome == Outcome::Crash).count();
        let critical = trajs.iter().filter(|t| t.outcome != Outcome::Uneventful).count();
        let crash_rate = if settings.eval_episodes > 0 {
            evaluate(config, &policy, settings.eval_episodes, derive_seed(eval_root, &[it as u64]))?
        } else {
            crashes as f64 / trajs.len() as f64
        };
        let b = match settings.baseline {
            Baseline::RunningMean => previous_mean_return,
            Baseline::Constant { value } => value,
        };
        let grad = reinforce_gradient(&trajs, &policy, b, settings.mode)?;
        previous_mean_return =
            trajs.iter().map(|t| t.total_return()).sum::<f64>() / trajs.len() as f64;

        points.push(LearningPoint {
            iteration: it,
            theta: policy.theta,
            crash_rate,
            critical_fraction: Some(critical as f64 / trajs.len() as f64),
            baseline: Some(b),
            gradient: Some(grad.clone()),
        });

        for (t, g) in policy.theta.iter_mut().zip(&grad.mean) {
            *t += settings.learning_rate * g;
        }
        let norm = policy.norm();
        if !norm.is_finite() || norm > settings.max_theta_norm {
            status = TrainingStatus::Diverged {
                iteration: it,
                theta_norm: norm,
            };
            break;
        }
    }

    if status == TrainingStatus::Completed {
        let it = settings.iterations;
        let crash_rate = if settings.eval_episodes > 0 {
            evaluate(config, &policy, settings.eval_episodes, derive_seed(eval_root, &[it as u64]))?
        } else {
            let trajs = run_batch(config, &policy, settings.batch, derive_seed(seed, &[it as u64]))?;
            trajs.iter().filter(|t| t.outcome == Outcome::Crash).count() as f64 / trajs.len() as f64
        };
        points.push(LearningPoint {
            iteration: it,
            theta: policy.theta,
            crash_rate,
            critical_fraction: None,
            baseline: None,
            gradient: None,
        });
    }

    Ok(LearningCurve {
        mode: settings.mode,
        seed,
        points,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub full_iterations: Option<usize>,
    pub window_iterations: Option<usize>,
    pub window_faster: bool,
}

/// Equal-budget race between full and window-filtered training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingComparison {
    pub initial_crash_rate: f64,
    pub target_crash_rate: f64,
    pub runs: Vec<SeedComparison>,
    pub wins: usize,
    pub required_wins: usize,
    pub pass: bool,
    pub curves: Vec<LearningCurve>,
}

/// Trains with [`GradientMode::Full`] and [`GradientMode::FilteredWindow`]
/// from the same seeds and counts seeds where the filtered run first reaches
/// `(1 - target_reduction) * initial crash rate` in strictly fewer iterations.
pub fn compare_training(
    config: &EnvConfig,
    policy0: &PolicyParams,
    settings: &TrainSettings,
    seeds: &[u64],
    target_reduction: f64,
    required_wins: usize,
) -> Result<TrainingComparison> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "must not be empty"));
    }
    if !(target_reduction > 0.0 && target_reduction < 1.0) {
        return Err(Error::invalid("target_reduction", "must be in (0, 1)"));
    }
    let mut curves = Vec::with_capacity(2 * seeds.len());
    let mut runs = Vec::with_capacity(seeds.len());
    let mut initial = None;
    let mut target = 0.0;
    for &seed in seeds {
        let full = train(config, policy0, &TrainSettings { mode: GradientMode::Full, ..settings.clone() }, seed)?;
        let window = train(
            config,
            policy0,
            &TrainSettings {
                mode: GradientMode::FilteredWindow,
                ..settings.clone()
            },
            seed,
        )?;
        // the first seed fixes the reference crash rate for every race
        let init = *initial.get_or_insert(full.initial_crash_rate());
        target = (1.0 - target_reduction) * init;
        let f = full.iterations_to(target);
        let w = window.iterations_to(target);
        let window_faster = match (w, f) {
            (Some(w), Some(f)) => w < f,
            (Some(_), None) => true,
            _ => false,
        };
        runs.push(SeedComparison {
            seed,
            full_iterations: f,
            window_iterations: w,
            window_faster,
        });
        curves.push(full);
        curves.push(window);
    }
    let wins = runs.iter().filter(|r| r.window_faster).count();
    Ok(TrainingComparison {
        initial_crash_rate: initial.unwrap_or(0.0),
        target_crash_rate: target,
        runs,
        wins,
        required_wins,
        pass: wins >= required_wins,
        curves,
    })
}
