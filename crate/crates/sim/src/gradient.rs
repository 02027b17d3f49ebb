//! Score-function policy gradients over driving trajectories.
//!
//! The per-episode summand is
//!
//! ```text
//! X = (R - b) * sum_t grad log pi(a_t | s_t) + sum_t d r_t / d theta
//! ```
//!
//! where the second sum is the direct dependence of the effort reward on
//! `theta`. Filtered modes multiply `X` by the episode's critical indicator
//! and still divide by the whole batch.

use rayon::prelude::*;
use rarity_core::estimator::{EstimatorKind, GradientEstimate};
use rarity_core::rng::derive_seed;
use rarity_core::stats::{column_means, column_variances};
use rarity_core::theorem::{Comparison, Property, Rule, VerificationReport, GATE_Z, VARIANCE_RTOL};
use serde::{Deserialize, Serialize};

use crate::env::{
    classify_trajectory, episode_seed, run_batch, simulate, ConflictDraw, EnvConfig, PolicyParams,
    Trajectory, POLICY_DIM,
};
use crate::error::{Error, Result};
use crate::par::ordered_sum;

/// Lower and upper multiples of `1/rho_hat` accepted for the full/filtered
/// variance ratio.
pub const RATIO_BAND: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Every episode contributes.
    Full,
    /// Normal episodes contribute zero.
    FilteredEpisode,
    /// As `FilteredEpisode`, and critical episodes only contribute the steps
    /// inside their critical window.
    FilteredWindow,
}

impl GradientMode {
    pub fn estimator_kind(self) -> EstimatorKind {
        match self {
            GradientMode::Full => EstimatorKind::Mu1,
            _ => EstimatorKind::Mu2,
        }
    }
}

fn episode_summand(
    traj: &Trajectory,
    baseline: f64,
    window: Option<(usize, usize)>,
) -> [f64; POLICY_DIM] {
    let advantage = traj.total_return() - baseline;
    let (lo, hi) = window.unwrap_or((0, traj.steps.len().saturating_sub(1)));
    let mut x = [0.0; POLICY_DIM];
    for step in traj.steps.iter().take(hi + 1).skip(lo) {
        for k in 0..POLICY_DIM {
            x[k] += advantage * step.log_policy_gradient[k] + step.reward_gradient[k];
        }
    }
    x
}

/// REINFORCE estimate of the gradient of expected return over an on-policy
/// batch.
pub fn reinforce_gradient(
    trajectories: &[Trajectory],
    policy: &PolicyParams,
    baseline: f64,
    mode: GradientMode,
) -> Result<GradientEstimate> {
    if trajectories.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !baseline.is_finite() {
        return Err(Error::invalid("baseline", "must be finite"));
    }
    let mut rows = Vec::with_capacity(trajectories.len());
    for (i, traj) in trajectories.iter().enumerate() {
        if traj.theta != policy.theta {
            return Err(Error::OffPolicy { index: i });
        }
        let row = match mode {
            GradientMode::Full => episode_summand(traj, baseline, None),
            GradientMode::FilteredEpisode | GradientMode::FilteredWindow => {
                let class = classify_trajectory(traj)?;
                if !class.label.is_critical() {
                    [0.0; POLICY_DIM]
                } else if mode == GradientMode::FilteredWindow {
                    episode_summand(traj, baseline, class.critical_window)
                } else {
                    episode_summand(traj, baseline, None)
                }
            }
        };
        rows.push(row);
    }
    Ok(GradientEstimate::from_summands(&rows, mode.estimator_kind())?)
}

/// Central finite differences of the Monte Carlo mean return, with standard
/// errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifference {
    pub gradient: [f64; POLICY_DIM],
    pub std_error: [f64; POLICY_DIM],
    pub epsilon: f64,
    pub episodes: usize,
}

/// Finite-difference oracle for the expected-return gradient. Episode `i`
/// reuses the same random stream at `theta + eps e_k` and `theta - eps e_k`
/// (common random numbers).
pub fn finite_difference(
    config: &EnvConfig,
    policy: &PolicyParams,
    epsilon: f64,
    episodes: usize,
    seed: u64,
) -> Result<FiniteDifference> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", "must be positive and finite"));
    }
    if episodes < 2 {
        return Err(Error::invalid("episodes", "must be at least 2"));
    }
    config.validate()?;
    policy.validate()?;
    let sums = ordered_sum::<{ 2 * POLICY_DIM }>(episodes, |i| {
        let s = episode_seed(seed, i as u64);
        let mut out = [0.0; 2 * POLICY_DIM];
        for k in 0..POLICY_DIM {
            let up = simulate(config, &policy.perturbed(k, epsilon), s, ConflictDraw::Natural, None).0;
            let down =
                simulate(config, &policy.perturbed(k, -epsilon), s, ConflictDraw::Natural, None).0;
            let d = (up.total_return - down.total_return) / (2.0 * epsilon);
            out[k] = d;
            out[POLICY_DIM + k] = d * d;
        }
        out
    });
    let n = episodes as f64;
    let mut gradient = [0.0; POLICY_DIM];
    let mut std_error = [0.0; POLICY_DIM];
    for k in 0..POLICY_DIM {
        let m = sums[k] / n;
        let var = ((sums[POLICY_DIM + k] / n - m * m) * n / (n - 1.0)).max(0.0);
        gradient[k] = m;
        std_error[k] = (var / n).sqrt();
    }
    Ok(FiniteDifference {
        gradient,
        std_error,
        epsilon,
        episodes,
    })
}

pub fn finite_difference_gradient(
    config: &EnvConfig,
    policy: &PolicyParams,
    epsilon: f64,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(finite_difference(config, policy, epsilon, episodes, seed)?
        .gradient
        .to_vec())
}

struct TrialGradients {
    full: [f64; POLICY_DIM],
    filtered: [f64; POLICY_DIM],
    critical: usize,
}

/// Full vs episode-filtered estimates over `trials` independent batches.
///
/// Gates: the paired difference of the two means is zero within
/// [`GATE_Z`] standard errors in every coordinate; the filtered estimate's
/// across-trial variance is no larger than the full one's (within
/// [`VARIANCE_RTOL`]); and the variance ratio times the empirical critical
/// fraction lies in [`RATIO_BAND`].
pub fn gradient_variance_comparison(
    config: &EnvConfig,
    policy: &PolicyParams,
    baseline: f64,
    batch: usize,
    trials: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if batch < 2 {
        return Err(Error::invalid("batch", "must be at least 2"));
    }
    if trials < 2 {
        return Err(Error::invalid("trials", "must be at least 2"));
    }
    let per_trial: Vec<TrialGradients> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<TrialGradients> {
            let trajs = run_batch(config, policy, batch, derive_seed(seed, &[t as u64]))?;
            let full = reinforce_gradient(&trajs, policy, baseline, GradientMode::Full)?;
            let filtered =
                reinforce_gradient(&trajs, policy, baseline, GradientMode::FilteredEpisode)?;
            let critical = trajs
                .iter()
                .map(classify_trajectory)
                .filter(|c| c.as_ref().is_ok_and(|c| c.label.is_critical()))
                .count();
            let as_array = |v: Vec<f64>| -> [f64; POLICY_DIM] { v.try_into().expect("policy dimension") };
            Ok(TrialGradients {
                full: as_array(full.mean),
                filtered: as_array(filtered.mean),
                critical,
            })
        })
        .collect::<Result<_>>()?;

    let full: Vec<[f64; POLICY_DIM]> = per_trial.iter().map(|t| t.full).collect();
    let filtered: Vec<[f64; POLICY_DIM]> = per_trial.iter().map(|t| t.filtered).collect();
    let diff: Vec<[f64; POLICY_DIM]> = per_trial
        .iter()
        .map(|t| std::array::from_fn(|k| t.full[k] - t.filtered[k]))
        .collect();
    let critical: usize = per_trial.iter().map(|t| t.critical).sum();
    let rho_hat = critical as f64 / (batch * trials) as f64;

    let full_means = column_means(&full);
    let filt_means = column_means(&filtered);
    let var_full: f64 = column_variances(&full, &full_means).iter().sum();
    let var_filt: f64 = column_variances(&filtered, &filt_means).iter().sum();
    let diff_means = column_means(&diff);
    let diff_vars = column_variances(&diff, &diff_means);
    let ratio = var_full / var_filt;

    let mut comparisons = vec![
        Comparison::info("critical fraction", rho_hat),
        Comparison::info("variance ratio", ratio),
        Comparison::info("1 / critical fraction", 1.0 / rho_hat),
    ];
    for k in 0..POLICY_DIM {
        comparisons.push(Comparison::info(format!("full mean[{k}]"), full_means[k]));
        comparisons.push(Comparison::info(format!("filtered mean[{k}]"), filt_means[k]));
        comparisons.push(Comparison::new(
            format!("full - filtered mean[{k}]"),
            diff_means[k],
            0.0,
            GATE_Z * (diff_vars[k] / trials as f64).sqrt(),
            Rule::AbsWithin,
        ));
    }
    comparisons.push(Comparison::new(
        "var(filtered) <= var(full)",
        var_filt,
        var_full,
        VARIANCE_RTOL,
        Rule::AtMost,
    ));
    comparisons.push(Comparison::new(
        "variance ratio x critical fraction >= lower",
        ratio * rho_hat,
        RATIO_BAND.0,
        0.0,
        Rule::AtLeast,
    ));
    comparisons.push(Comparison::new(
        "variance ratio x critical fraction <= upper",
        ratio * rho_hat,
        RATIO_BAND.1,
        0.0,
        Rule::AtMost,
    ));
    Ok(VerificationReport::new(
        Property::PolicyGradientVariance,
        None,
        trials,
        batch,
        seed,
        GATE_Z,
        comparisons,
    ))
}

/// Largest relative gap allowed between the REINFORCE estimate and the
/// finite-difference oracle, per coordinate.
pub const ORACLE_RTOL: f64 = 0.05;
/// Largest relative gap allowed between finite differences at `epsilon` and
/// `epsilon / 2`, per coordinate.
pub const FD_SELF_RTOL: f64 = 0.01;

/// Full-mode REINFORCE on one batch of `batch` episodes against central
/// finite differences over `fd_episodes` common-random-number episodes, the
/// latter computed at both `epsilon` and `epsilon / 2`.
pub fn gradient_oracle_check(
    config: &EnvConfig,
    policy: &PolicyParams,
    baseline: f64,
    batch: usize,
    fd_episodes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<VerificationReport> {
    let trajs = run_batch(config, policy, batch, derive_seed(seed, &[0]))?;
    let reinforce = reinforce_gradient(&trajs, policy, baseline, GradientMode::Full)?;
    drop(trajs);
    let fd_seed = derive_seed(seed, &[1]);
    let coarse = finite_difference(config, policy, epsilon, fd_episodes, fd_seed)?;
    let fine = finite_difference(config, policy, epsilon / 2.0, fd_episodes, fd_seed)?;

    let mut comparisons = Vec::with_capacity(5 * POLICY_DIM);
    for k in 0..POLICY_DIM {
        comparisons.push(Comparison::new(
            format!("reinforce vs finite difference[{k}]"),
            reinforce.mean[k],
            coarse.gradient[k],
            ORACLE_RTOL,
            Rule::RelWithin,
        ));
        comparisons.push(Comparison::new(
            format!("finite difference eps vs eps/2[{k}]"),
            coarse.gradient[k],
            fine.gradient[k],
            FD_SELF_RTOL,
            Rule::RelWithin,
        ));
        comparisons.push(Comparison::info(format!("finite difference se[{k}]"), coarse.std_error[k]));
        comparisons.push(Comparison::info(
            format!("finite difference eps/2 se[{k}]"),
            fine.std_error[k],
        ));
    }
    comparisons.push(Comparison::info(
        "reinforce se (trace)",
        reinforce.variance_of_mean().sqrt(),
    ));
    Ok(VerificationReport::new(
        Property::GradientOracle,
        None,
        1,
        batch,
        seed,
        ORACLE_RTOL,
        comparisons,
    ))
}
