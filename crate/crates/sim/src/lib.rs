//! Car-following environment with a rare hard-brake conflict, and
//! score-function policy gradients over its trajectories.
//!
//! [`env`] simulates episodes and labels them normal or critical,
//! [`gradient`] estimates policy gradients in full and filtered modes and
//! checks them against finite differences, and [`train`] runs plain
//! gradient ascent with either estimator.

pub mod env;
pub mod error;
pub mod gradient;
mod par;
pub mod train;

pub use env::{
    classify_trajectory, conditional_crash_rate, crash_rate, episode_seed, run_batch, run_conflict_episode, run_episode, Classification, CrashRate,
    EnvConfig, Outcome, PolicyParams, Step, Trajectory, POLICY_DIM,
};
pub use error::{Error, Result};
pub use gradient::{
    finite_difference, finite_difference_gradient, gradient_oracle_check,
    gradient_variance_comparison,
    reinforce_gradient, FiniteDifference, GradientMode,
};
pub use train::{
    compare_training, train, Baseline, LearningCurve, LearningPoint, TrainSettings,
    TrainingComparison, TrainingStatus,
};
