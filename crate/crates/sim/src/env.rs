//! One-dimensional car following with a rare lead-vehicle hard brake.
//!
//! The ego vehicle follows a lead vehicle on a straight road. Both start at
//! the cruise speed `init_speed`, `init_gap` apart. With probability
//! `conflict_prob` per episode the lead brakes at `lead_decel` for
//! `lead_brake_time` seconds, starting at a uniformly drawn step in the first
//! half of the horizon, and then accelerates back to cruise speed. Each step
//! the ego brakes with probability
//!
//! ```text
//! p = logistic(theta[0] * (gap_ref - gap) / gap_scale
//!            + theta[1] * closing_speed / speed_scale
//!            + theta[2])
//! ```
//!
//! and otherwise accelerates back toward cruise speed. Accelerations are
//! piecewise constant over a step and integrated exactly, including the
//! instant a vehicle stops or reaches cruise speed.
//!
//! Rewards: `-crash_penalty` on the crash step, plus a zero-mean effort term
//! `-effort_cost * (brake - p)` on every step. The effort term has zero
//! expectation under every policy, so the expected return is exactly
//! `-crash_penalty * P(crash)`, but it gives normal episodes gradient
//! contributions with zero mean and positive variance.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rarity_core::rng;
use rarity_core::EventLabel;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::ordered_sum;

pub const POLICY_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Probability that the lead vehicle hard-brakes during an episode.
    pub conflict_prob: f64,
    pub horizon: usize,
    /// Seconds per step.
    pub dt: f64,
    /// Initial bumper-to-bumper gap, meters.
    pub init_gap: f64,
    /// Initial and cruise speed of both vehicles, m/s.
    pub init_speed: f64,
    /// Lead deceleration during a conflict, m/s^2.
    pub lead_decel: f64,
    /// Duration of the lead's hard brake, seconds.
    pub lead_brake_time: f64,
    /// Lead acceleration back to cruise speed after braking, m/s^2.
    pub lead_accel: f64,
    /// Ego deceleration when braking, m/s^2.
    pub ego_brake_decel: f64,
    /// Ego acceleration toward cruise speed when not braking, m/s^2.
    pub ego_accel: f64,
    /// Minimum gap below which a crash-free episode counts as a near miss.
    pub near_miss_gap: f64,
    pub crash_penalty: f64,
    /// Scale of the zero-mean braking-effort reward.
    pub effort_cost: f64,
    /// Reference gap of the policy's gap feature, meters.
    pub gap_ref: f64,
    pub gap_scale: f64,
    pub speed_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            conflict_prob: 0.01,
            horizon: 100,
            dt: 0.1,
            init_gap: 30.0,
            init_speed: 20.0,
            lead_decel: 8.0,
            lead_brake_time: 1.5,
            lead_accel: 2.0,
            ego_brake_decel: 6.0,
            ego_accel: 2.0,
            near_miss_gap: 1.0,
            crash_penalty: 1.0,
            effort_cost: 0.1,
            gap_ref: 10.0,
            gap_scale: 10.0,
            speed_scale: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("init_speed", self.init_speed),
            ("lead_decel", self.lead_decel),
            ("lead_brake_time", self.lead_brake_time),
            ("lead_accel", self.lead_accel),
            ("ego_brake_decel", self.ego_brake_decel),
            ("ego_accel", self.ego_accel),
            ("gap_scale", self.gap_scale),
            ("speed_scale", self.speed_scale),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("{v} must be positive and finite")));
            }
        }
        if !(0.0..=1.0).contains(&self.conflict_prob) {
            return Err(Error::invalid(
                "conflict_prob",
                format!("{} is outside [0, 1]", self.conflict_prob),
            ));
        }
        if self.horizon < 10 {
            return Err(Error::invalid("horizon", "must be at least 10 steps"));
        }
        if !(self.near_miss_gap > 0.0 && self.init_gap > self.near_miss_gap && self.init_gap.is_finite()) {
            return Err(Error::invalid(
                "near_miss_gap",
                "need init_gap > near_miss_gap > 0",
            ));
        }
        for (field, v) in [
            ("crash_penalty", self.crash_penalty),
            ("effort_cost", self.effort_cost),
            ("gap_ref", self.gap_ref),
        ] {
            if !v.is_finite() || (field != "gap_ref" && v < 0.0) {
                return Err(Error::invalid(field, format!("{v} is not allowed")));
            }
        }
        Ok(())
    }

    fn brake_steps(&self) -> usize {
        (self.lead_brake_time / self.dt).round().max(1.0) as usize
    }

    /// Policy features at a given gap and closing speed.
    pub fn features(&self, gap: f64, closing_speed: f64) -> [f64; POLICY_DIM] {
        [
            (self.gap_ref - gap) / self.gap_scale,
            closing_speed / self.speed_scale,
            1.0,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: [f64; POLICY_DIM],
}

impl PolicyParams {
    pub fn new(theta: [f64; POLICY_DIM]) -> Self {
        PolicyParams { theta }
    }

    /// Brakes with probability 1 in every state (to double precision).
    pub fn always_brake() -> Self {
        PolicyParams::new([0.0, 0.0, 50.0])
    }

    /// Brakes with probability below `1e-21` in every state.
    pub fn never_brake() -> Self {
        PolicyParams::new([0.0, 0.0, -50.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.iter().all(|t| t.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("theta", "must be finite"))
        }
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn brake_probability(&self, features: &[f64; POLICY_DIM]) -> f64 {
        let z: f64 = self.theta.iter().zip(features).map(|(t, f)| t * f).sum();
        logistic(z)
    }

    pub fn perturbed(&self, coord: usize, delta: f64) -> Self {
        let mut p = *self;
        p.theta[coord] += delta;
        p
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Uneventful,
    NearMiss,
    Crash,
}

/// One control step: the observation, the sampled action, and what the
/// score-function estimator needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub gap: f64,
    pub ego_speed: f64,
    pub lead_speed: f64,
    pub brake: bool,
    pub brake_prob: f64,
    /// `grad_theta log pi(brake | state) = (brake - p) * features`.
    pub log_policy_gradient: [f64; POLICY_DIM],
    pub reward: f64,
    /// Partial derivative of this step's reward in `theta`, holding the
    /// state and action fixed.
    pub reward_gradient: [f64; POLICY_DIM],
    /// Gap at the end of the step.
    pub gap_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub theta: [f64; POLICY_DIM],
    pub steps: Vec<Step>,
    pub outcome: Outcome,
    pub conflict_onset: Option<usize>,
    /// Inclusive step range `[onset, end]`; present iff a conflict fired.
    pub critical_window: Option<(usize, usize)>,
    pub near_miss_gap: f64,
}

impl Trajectory {
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn min_gap(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.gap_after)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn crash_step(&self) -> Option<usize> {
        match self.outcome {
            Outcome::Crash => Some(self.steps.len() - 1),
            _ => None,
        }
    }
}

/// Seed of episode `index` within a batch seeded by `batch_seed`.
pub fn episode_seed(batch_seed: u64, index: u64) -> u64 {
    rng::derive_seed(batch_seed, &[index])
}

/// Exact travel over `dt` under constant acceleration `accel`, with speed
/// clamped to `[0, cap]`.
fn advance(speed: f64, accel: f64, dt: f64, cap: f64) -> (f64, f64) {
    if accel < 0.0 {
        let t_stop = speed / -accel;
        if t_stop <= dt {
            return (speed * t_stop * 0.5, 0.0);
        }
    } else if accel > 0.0 {
        let t_cap = (cap - speed) / accel;
        if t_cap <= dt {
            let t_cap = t_cap.max(0.0);
            let dx = speed * t_cap + 0.5 * accel * t_cap * t_cap + cap * (dt - t_cap);
            return (dx, cap);
        }
    }
    (speed * dt + 0.5 * accel * dt * dt, speed + accel * dt)
}

/// Whether the conflict fires, and when. Drawn first in every episode so
/// per-step uniforms line up across policies.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ConflictDraw {
    Natural,
    Forced,
}

pub(crate) struct Summary {
    pub outcome: Outcome,
    pub total_return: f64,
}

pub(crate) fn simulate(
    config: &EnvConfig,
    policy: &PolicyParams,
    seed: u64,
    draw: ConflictDraw,
    mut record: Option<&mut Vec<Step>>,
) -> (Summary, Option<usize>) {
    let mut rng: ChaCha8Rng = rng::stream(seed, 0);
    let u_conflict: f64 = rng.random();
    let onset_draw = rng.random_range(0..config.horizon / 2);
    let onset = match draw {
        ConflictDraw::Forced => Some(onset_draw),
        ConflictDraw::Natural => (u_conflict < config.conflict_prob).then_some(onset_draw),
    };
    let brake_end = onset.map(|o| o + config.brake_steps());
    let cruise = config.init_speed;

    let (mut gap, mut v_ego, mut v_lead) = (config.init_gap, cruise, cruise);
    let mut total_return = 0.0;
    let mut min_gap = f64::INFINITY;
    let mut outcome = Outcome::Uneventful;

    for t in 0..config.horizon {
        let u: f64 = rng.random();
        let phi = config.features(gap, v_ego - v_lead);
        let p = policy.brake_probability(&phi);
        let brake = u < p;
        let a = if brake { 1.0 } else { 0.0 };

        let lead_acc = match (onset, brake_end) {
            (Some(o), Some(e)) if t >= o && t < e => -config.lead_decel,
            (Some(o), _) if t >= o => config.lead_accel,
            _ => 0.0,
        };
        let ego_acc = if brake {
            -config.ego_brake_decel
        } else if v_ego < cruise {
            config.ego_accel
        } else {
            0.0
        };
        let (dx_lead, nv_lead) = advance(v_lead, lead_acc, config.dt, cruise);
        let (dx_ego, nv_ego) = advance(v_ego, ego_acc, config.dt, cruise);
        let obs_gap = gap;
        let (obs_ego, obs_lead) = (v_ego, v_lead);
        gap += dx_lead - dx_ego;
        v_lead = nv_lead;
        v_ego = nv_ego;
        min_gap = min_gap.min(gap);

        let mut reward = -config.effort_cost * (a - p);
        let crashed = gap <= 0.0;
        if crashed {
            reward -= config.crash_penalty;
        }
        total_return += reward;

        if let Some(steps) = record.as_deref_mut() {
            let dp = p * (1.0 - p);
            steps.push(Step {
                gap: obs_gap,
                ego_speed: obs_ego,
                lead_speed: obs_lead,
                brake,
                brake_prob: p,
                log_policy_gradient: phi.map(|f| (a - p) * f),
                reward,
                reward_gradient: phi.map(|f| config.effort_cost * dp * f),
                gap_after: gap,
            });
        }
        if crashed {
            outcome = Outcome::Crash;
            break;
        }
    }
    if outcome != Outcome::Crash && min_gap < config.near_miss_gap {
        outcome = Outcome::NearMiss;
    }
    (
        Summary {
            outcome,
            total_return,
        },
        onset,
    )
}

/// End of the critical window: the crash step, or the first step after the
/// closest approach at which the gap is back above `near_miss_gap`, or the
/// last step.
fn window_end(steps: &[Step], onset: usize, outcome: Outcome, near_miss_gap: f64) -> usize {
    let last = steps.len() - 1;
    if outcome == Outcome::Crash {
        return last;
    }
    let closest = (onset..steps.len())
        .min_by(|&i, &j| steps[i].gap_after.total_cmp(&steps[j].gap_after))
        .unwrap_or(last);
    (closest + 1..steps.len())
        .find(|&i| steps[i].gap_after > near_miss_gap)
        .unwrap_or(last)
}

fn rollout(config: &EnvConfig, policy: &PolicyParams, seed: u64, draw: ConflictDraw) -> Trajectory {
    let mut steps = Vec::with_capacity(config.horizon);
    let (summary, onset) = simulate(config, policy, seed, draw, Some(&mut steps));
    let critical_window =
        onset.map(|o| (o, window_end(&steps, o, summary.outcome, config.near_miss_gap)));
    Trajectory {
        theta: policy.theta,
        steps,
        outcome: summary.outcome,
        conflict_onset: onset,
        critical_window,
        near_miss_gap: config.near_miss_gap,
    }
}

/// Simulates one episode. Deterministic in `(config, policy, seed)`.
pub fn run_episode(config: &EnvConfig, policy: &PolicyParams, seed: u64) -> Result<Trajectory> {
    config.validate()?;
    policy.validate()?;
    Ok(rollout(config, policy, seed, ConflictDraw::Natural))
}

/// Like [`run_episode`] but the conflict always fires; onset and per-step
/// draws are those the natural episode with the same seed would use.
pub fn run_conflict_episode(
    config: &EnvConfig,
    policy: &PolicyParams,
    seed: u64,
) -> Result<Trajectory> {
    config.validate()?;
    policy.validate()?;
    Ok(rollout(config, policy, seed, ConflictDraw::Forced))
}

/// Episodes `0..count` of a batch, in index order.
pub fn run_batch(
    config: &EnvConfig,
    policy: &PolicyParams,
    count: usize,
    batch_seed: u64,
) -> Result<Vec<Trajectory>> {
    use rayon::prelude::*;
    config.validate()?;
    policy.validate()?;
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            rollout(
                config,
                policy,
                episode_seed(batch_seed, i as u64),
                ConflictDraw::Natural,
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub label: EventLabel,
    pub critical_window: Option<(usize, usize)>,
}

/// Crashes and near misses are critical; everything else is normal. The
/// window is recomputed from the steps.
pub fn classify_trajectory(traj: &Trajectory) -> Result<Classification> {
    let Some(last) = traj.steps.last() else {
        return Err(Error::Malformed("trajectory has no steps".into()));
    };
    let crashed = last.gap_after <= 0.0;
    if crashed != (traj.outcome == Outcome::Crash) {
        return Err(Error::Malformed(format!(
            "outcome {:?} disagrees with final gap {}",
            traj.outcome, last.gap_after
        )));
    }
    match traj.outcome {
        Outcome::Uneventful => Ok(Classification {
            label: EventLabel::Normal,
            critical_window: None,
        }),
        Outcome::NearMiss | Outcome::Crash => {
            let onset = traj.conflict_onset.ok_or_else(|| {
                Error::Malformed(format!("{:?} outcome without a conflict onset", traj.outcome))
            })?;
            if onset >= traj.steps.len() {
                return Err(Error::Malformed(format!("onset {onset} is past the last step")));
            }
            Ok(Classification {
                label: EventLabel::Critical,
                critical_window: Some((
                    onset,
                    window_end(&traj.steps, onset, traj.outcome, traj.near_miss_gap),
                )),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashRate {
    pub episodes: usize,
    pub crashes: usize,
    pub rate: f64,
    /// 95% Wilson score interval.
    pub lower: f64,
    pub upper: f64,
}

pub(crate) fn wilson(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn crash_rate(
    config: &EnvConfig,
    policy: &PolicyParams,
    episodes: usize,
    seed: u64,
) -> Result<CrashRate> {
    if episodes == 0 {
        return Err(Error::invalid("episodes", "must be at least 1"));
    }
    config.validate()?;
    policy.validate()?;
    let [crashes] = ordered_sum(episodes, |i| {
        let (s, _) = simulate(
            config,
            policy,
            episode_seed(seed, i as u64),
            ConflictDraw::Natural,
            None,
        );
        [if s.outcome == Outcome::Crash { 1.0 } else { 0.0 }]
    });
    let crashes = crashes as usize;
    let (lower, upper) = wilson(crashes, episodes, 1.96);
    Ok(CrashRate {
        episodes,
        crashes,
        rate: crashes as f64 / episodes as f64,
        lower,
        upper,
    })
}

/// Crash probability given that the conflict fires, from `episodes` forced
/// conflicts. The unconditional crash rate is `conflict_prob` times this.
pub fn conditional_crash_rate(
    config: &EnvConfig,
    policy: &PolicyParams,
    episodes: usize,
    seed: u64,
) -> Result<CrashRate> {
    if episodes == 0 {
        return Err(Error::invalid("episodes", "must be at least 1"));
    }
    config.validate()?;
    policy.validate()?;
    let [crashes] = ordered_sum(episodes, |i| {
        let (s, _) = simulate(
            config,
            policy,
            episode_seed(seed, i as u64),
            ConflictDraw::Forced,
            None,
        );
        [if s.outcome == Outcome::Crash { 1.0 } else { 0.0 }]
    });
    let crashes = crashes as usize;
    let (lower, upper) = wilson(crashes, episodes, 1.96);
    Ok(CrashRate {
        episodes,
        crashes,
        rate: crashes as f64 / episodes as f64,
        lower,
        upper,
    })
}

/// Mean return over `episodes` natural episodes of a batch seeded by `seed`.
pub fn mean_return(config: &EnvConfig, policy: &PolicyParams, episodes: usize, seed: u64) -> f64 {
    let [total] = ordered_sum(episodes, |i| {
        let (s, _) = simulate(
            config,
            policy,
            episode_seed(seed, i as u64),
            ConflictDraw::Natural,
            None,
        );
        [s.total_return]
    });
    total / episodes as f64
}
