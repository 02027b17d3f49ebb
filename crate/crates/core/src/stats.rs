//! Small descriptive statistics and least-squares fitting.

use serde::{Deserialize, Serialize};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Bessel-corrected variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Per-coordinate mean of equal-length rows.
pub fn column_means<R: AsRef<[f64]>>(rows: &[R]) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    let mut acc = vec![0.0; dim];
    for row in rows {
        for (a, x) in acc.iter_mut().zip(row.as_ref()) {
            *a += x;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Per-coordinate Bessel-corrected variances of equal-length rows.
pub fn column_variances<R: AsRef<[f64]>>(rows: &[R], means: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; means.len()];
    if rows.len() < 2 {
        return acc;
    }
    for row in rows {
        for ((a, x), m) in acc.iter_mut().zip(row.as_ref()).zip(means) {
            *a += (x - m) * (x - m);
        }
    }
    let denom = (rows.len() - 1) as f64;
    acc.iter_mut().for_each(|a| *a /= denom);
    acc
}

/// Trace of the sample covariance: per-coordinate variances summed.
pub fn trace_variance<R: AsRef<[f64]>>(rows: &[R]) -> f64 {
    let means = column_means(rows);
    column_variances(rows, &means).iter().sum()
}

pub fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Ordinary least-squares line through `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `y = intercept + slope * x`. `None` with fewer than two points or a
/// constant `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let e = b - (intercept + slope * a);
                e * e
            })
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Some(LineFit {
        slope,
        intercept,
        r2,
    })
}

/// Ceiling that ignores floating-point noise just above an integer.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}
