//! Importance sampling across dimensions.
//!
//! Target `p = N(0, I_d)`, proposal `q = N(a 1, I_d)`. The likelihood ratio
//! `w = p/q = exp(-a sum(x) + d a^2 / 2)` has `E_q[w] = 1` and
//! `E_q[w^2] = exp(d a^2)`, so the estimator variance grows exponentially in
//! `d`. Its own Monte Carlo estimate degrades just as fast: the relative
//! variance of `w^2` is `exp(4 d a^2) - 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::theorem::ScalingCurve;

/// Points whose predicted relative standard error exceeds this are flagged
/// unreliable and left out of the slope fit.
pub const MAX_RELATIVE_SE: f64 = 0.5;

pub fn likelihood_ratio(x: &[f64], shift: f64) -> f64 {
    let s: f64 = x.iter().sum();
    (-shift * s + 0.5 * x.len() as f64 * shift * shift).exp()
}

/// `E_q[w^2] = exp(d a^2)`.
pub fn analytic_second_moment(dim: usize, shift: f64) -> f64 {
    (dim as f64 * shift * shift).exp()
}

/// Predicted relative standard error of the mean of `w^2` over `samples` draws.
pub fn predicted_relative_se(dim: usize, shift: f64, samples: f64) -> f64 {
    ((4.0 * dim as f64 * shift * shift).exp_m1() / samples).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub dim: usize,
    pub shift: f64,
    pub samples: u64,
    pub mean_w2: f64,
    pub std_error: f64,
    pub analytic: f64,
    pub reliable: bool,
}

fn check(n: usize, trials: usize, shift: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be positive"));
    }
    if !(shift >= 0.0 && shift.is_finite()) {
        return Err(Error::invalid("shift", "must be finite and nonnegative"));
    }
    Ok(())
}

/// Monte Carlo estimate of `E_q[w^2]` from `trials` streams of `n` draws.
pub fn is_second_moment(
    dim: usize,
    shift: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    check(n, trials, shift)?;
    if dim == 0 {
        return Err(Error::invalid("dim", "must be positive"));
    }
    let dim_seed = rng::derive_seed(seed, &[dim as u64]);
    let sums: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(dim_seed, t as u64);
            let mut x = vec![0.0; dim];
            let (mut s2, mut s4) = (0.0, 0.0);
            for _ in 0..n {
                for xi in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *xi = shift + z;
                }
                let w = likelihood_ratio(&x, shift);
                let w2 = w * w;
                s2 += w2;
                s4 += w2 * w2;
            }
            (s2, s4)
        })
        .collect();
    let total = (n * trials) as f64;
    let (s2, s4) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let mean = s2 / total;
    let var = ((s4 / total - mean * mean) * total / (total - 1.0).max(1.0)).max(0.0);
    Ok(MomentEstimate {
        dim,
        shift,
        samples: total as u64,
        mean_w2: mean,
        std_error: (var / total).sqrt(),
        analytic: analytic_second_moment(dim, shift),
        reliable: predicted_relative_se(dim, shift, total) <= MAX_RELATIVE_SE,
    })
}

pub fn is_sweep_points(
    dim_grid: &[usize],
    shift: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    check(n, trials, shift)?;
    if dim_grid.is_empty() {
        return Err(Error::invalid("dim_grid", "must not be empty"));
    }
    if dim_grid.windows(2).any(|w| w[0] >= w[1]) || dim_grid[0] == 0 {
        return Err(Error::invalid("dim_grid", "must be positive and strictly increasing"));
    }
    dim_grid
        .iter()
        .map(|&d| is_second_moment(d, shift, n, trials, seed))
        .collect()
}

/// `ln E[w^2]` against `d` on linear axes; the fitted slope estimates `a^2`.
pub fn curve_from_points(points: &[MomentEstimate]) -> Result<ScalingCurve> {
    ScalingCurve::fit(
        points.iter().map(|p| p.dim as f64).collect(),
        points.iter().map(|p| p.mean_w2.ln()).collect(),
        points.iter().map(|p| p.reliable).collect(),
        false,
        false,
    )
}

pub fn is_dimension_sweep(
    dim_grid: &[usize],
    shift: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<ScalingCurve> {
    curve_from_points(&is_sweep_points(dim_grid, shift, n, trials, seed)?)
}
