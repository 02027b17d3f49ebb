//! Monte Carlo verification of the estimator properties, and the sample-size
//! scaling laws that follow from the closed-form variances.
//!
//! Each verification runs `trials` independent batches. Trial `t` draws from
//! the stream `(seed, t)`; trials may run on any rayon pool and are reduced in
//! trial order, so a report is bit-identical however many threads ran it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    closed_form_moments, coordinate_variances, estimate_mu1, estimate_mu2, sample_mixture_trial,
    EstimatorKind, GradientEstimate, LabeledSample, MixtureSpec,
};
use crate::stats::{ceil_tolerant, fit_line, squared_norm, trace_variance};

/// z-multiplier for pass/fail gates on means.
pub const GATE_Z: f64 = 4.0;
/// z-multiplier for sample-size planning.
pub const PLANNING_Z: f64 = 2.0;
/// Relative tolerance for empirical variances and variance ratios.
pub const VARIANCE_RTOL: f64 = 0.10;

const MIN_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Unbiasedness,
    VarianceOrdering,
    RhoFactor,
    AssumptionResidual,
    SnrCollapse,
    /// Full vs filtered policy-gradient estimates in the driving simulator.
    PolicyGradientVariance,
    /// Score-function gradient against the finite-difference oracle.
    GradientOracle,
    /// Filtered vs full training speed.
    TrainingEffectiveness,
    /// Required sample size against event frequency.
    LongtailScaling,
    /// Importance-weight second moment against dimension.
    DimensionScaling,
}

impl Property {
    pub fn label(self) -> &'static str {
        match self {
            Property::Unbiasedness => "unbiasedness",
            Property::VarianceOrdering => "variance ordering",
            Property::RhoFactor => "rho factor",
            Property::AssumptionResidual => "assumption residual",
            Property::SnrCollapse => "snr collapse",
            Property::PolicyGradientVariance => "policy-gradient variance",
            Property::GradientOracle => "gradient oracle",
            Property::TrainingEffectiveness => "training effectiveness",
            Property::LongtailScaling => "longtail scaling",
            Property::DimensionScaling => "dimension scaling",
        }
    }
}

/// How an empirical value is judged against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `|empirical - reference| <= tolerance`
    AbsWithin,
    /// `|empirical - reference| <= tolerance * |reference|`
    RelWithin,
    /// `empirical <= reference * (1 + tolerance)`
    AtMost,
    /// `empirical >= reference * (1 - tolerance)`
    AtLeast,
    /// Recorded for context; always passes.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub empirical: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub rule: Rule,
}

impl Comparison {
    pub fn new(
        name: impl Into<String>,
        empirical: f64,
        reference: f64,
        tolerance: f64,
        rule: Rule,
    ) -> Self {
        Comparison {
            name: name.into(),
            empirical,
            reference,
            tolerance,
            rule,
        }
    }

    pub fn info(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, value, f64::NAN, 0.0, Rule::Info)
    }

    pub fn passes(&self) -> bool {
        let (e, r, t) = (self.empirical, self.reference, self.tolerance);
        match self.rule {
            Rule::AbsWithin => (e - r).abs() <= t,
            Rule::RelWithin => (e - r).abs() <= t * r.abs(),
            Rule::AtMost => e <= r * (1.0 + t),
            Rule::AtLeast => e >= r * (1.0 - t),
            Rule::Info => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub property: Property,
    pub spec: Option<MixtureSpec>,
    pub trials: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Headline tolerance of the gate (z-multiplier or relative band).
    pub tolerance: f64,
    pub comparisons: Vec<Comparison>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn new(
        property: Property,
        spec: Option<MixtureSpec>,
        trials: usize,
        batch_size: usize,
        seed: u64,
        tolerance: f64,
        comparisons: Vec<Comparison>,
    ) -> Self {
        let pass = comparisons.iter().all(Comparison::passes);
        VerificationReport {
            property,
            spec,
            trials,
            batch_size,
            seed,
            tolerance,
            comparisons,
            pass,
        }
    }

    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }

    /// Re-derives `pass` from the stored comparisons.
    pub fn is_consistent(&self) -> bool {
        self.pass == self.comparisons.iter().all(Comparison::passes)
    }
}

/// Divisor used by the filtered estimator in unbiasedness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterDivisor {
    /// Divide by the whole batch (the unbiased form).
    #[default]
    BatchSize,
    /// Divide by the number of critical samples, i.e. the conditional mean
    /// `E[X | B]`. Biased for `E[X]`; kept as a contrast.
    CriticalCount,
}

fn conditional_critical_mean(samples: &[LabeledSample]) -> Vec<f64> {
    let dim = samples[0].value.len();
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for s in samples.iter().filter(|s| s.label.is_critical()) {
        count += 1;
        for (a, x) in acc.iter_mut().zip(&s.value) {
            *a += x;
        }
    }
    if count > 0 {
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    acc
}

fn check_budget(batch_size: usize, trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::invalid(
            "trials",
            format!("{trials} < {MIN_TRIALS}: too few trials for a variance estimate"),
        ));
    }
    if batch_size < 2 {
        return Err(Error::invalid("batch_size", "must be at least 2"));
    }
    Ok(())
}

struct TrialMeans {
    mu1: Vec<Vec<f64>>,
    mu2: Vec<Vec<f64>>,
}

fn run_trials(
    spec: &MixtureSpec,
    batch_size: usize,
    trials: usize,
    seed: u64,
    divisor: FilterDivisor,
) -> Result<TrialMeans> {
    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<_> {
            let batch = sample_mixture_trial(spec, batch_size, seed, t as u64)?;
            let m1 = estimate_mu1(&batch)?.mean;
            let m2 = match divisor {
                FilterDivisor::BatchSize => estimate_mu2(&batch)?.mean,
                FilterDivisor::CriticalCount => conditional_critical_mean(&batch),
            };
            Ok((m1, m2))
        })
        .collect::<Result<_>>()?;
    let (mu1, mu2) = per_trial.into_iter().unzip();
    Ok(TrialMeans { mu1, mu2 })
}

/// Grand means of both estimators against `E[X] = rho_b * mean_b`, each
/// coordinate gated at [`GATE_Z`] standard errors.
pub fn verify_unbiasedness(
    spec: &MixtureSpec,
    batch_size: usize,
    trials: usize,
    seed: u64,
) -> Result<VerificationReport> {
    verify_unbiasedness_with(spec, batch_size, trials, seed, FilterDivisor::BatchSize)
}

pub fn verify_unbiasedness_with(
    spec: &MixtureSpec,
    batch_size: usize,
    trials: usize,
    seed: u64,
    divisor: FilterDivisor,
) -> Result<VerificationReport> {
    check_budget(batch_size, trials)?;
    let runs = run_trials(spec, batch_size, trials, seed, divisor)?;
    let cf = closed_form_moments(spec);
    let grand1 = crate::stats::column_means(&runs.mu1);
    let grand2 = crate::stats::column_means(&runs.mu2);
    let total = (batch_size * trials) as f64;
    let dim = spec.dim();

    let mut comparisons = Vec::with_capacity(2 * dim);
    for (j, (v1, v2)) in coordinate_variances(spec).into_iter().enumerate() {
        let suffix = if dim == 1 { String::new() } else { format!("[{j}]") };
        let slack = 1e-12 * cf.mu[j].abs();
        comparisons.push(Comparison::new(
            format!("mu1 grand mean{suffix}"),
            grand1[j],
            cf.mu[j],
            GATE_Z * (v1 / total).sqrt() + slack,
            Rule::AbsWithin,
        ));
        comparisons.push(Comparison::new(
            format!("mu2 grand mean{suffix}"),
            grand2[j],
            cf.mu[j],
            GATE_Z * (v2 / total).sqrt() + slack,
            Rule::AbsWithin,
        ));
    }
    Ok(VerificationReport::new(
        Property::Unbiasedness,
        Some(spec.clone()),
        trials,
        batch_size,
        seed,
        GATE_Z,
        comparisons,
    ))
}

fn empirical_variances(
    spec: &MixtureSpec,
    batch_size: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_budget(batch_size, trials)?;
    let runs = run_trials(spec, batch_size, trials, seed, FilterDivisor::BatchSize)?;
    Ok((trace_variance(&runs.mu1), trace_variance(&runs.mu2)))
}

/// Across-trial variances of both estimators: ordered, and each within
/// [`VARIANCE_RTOL`] of its closed form over `batch_size`.
pub fn verify_variance_ordering(
    spec: &MixtureSpec,
    batch_size: usize,
    trials: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let (v1, v2) = empirical_variances(spec, batch_size, trials, seed)?;
    let cf = closed_form_moments(spec);
    let b = batch_size as f64;
    let comparisons = vec![
        Comparison::new("var(mu2) <= var(mu1)", v2, v1, VARIANCE_RTOL, Rule::AtMost),
        Comparison::new("var(mu1)", v1, cf.var_mu1 / b, VARIANCE_RTOL, Rule::RelWithin),
        Comparison::new("var(mu2)", v2, cf.var_mu2 / b, VARIANCE_RTOL, Rule::RelWithin),
    ];
    Ok(VerificationReport::new(
        Property::VarianceOrdering,
        Some(spec.clone()),
        trials,
        batch_size,
        seed,
        VARIANCE_RTOL,
        comparisons,
    ))
}

/// Closed-form ordering `var(mu2) <= var(mu1)` over `count` random specs
/// (dimension 1 to 4, `rho_b` log-uniform on `[1e-4, 1]`, arbitrary means and
/// variances).
pub fn verify_closed_form_ordering(count: usize, seed: u64) -> Result<VerificationReport> {
    if count == 0 {
        return Err(Error::invalid("count", "must be positive"));
    }
    let mut rng = crate::rng::stream(seed, 0);
    let mut violations = 0usize;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..count {
        let dim = rng.random_range(1..=4usize);
        let rho = 10f64.powf(rng.random_range(-4.0..=0.0));
        let mean_b = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let var_a = rng.random_range(0.0..10.0);
        let var_b = rng.random_range(0.0..10.0);
        let cf = closed_form_moments(&MixtureSpec::new(rho, mean_b, var_a, var_b)?);
        if cf.var_mu2 > cf.var_mu1 * (1.0 + 1e-12) {
            violations += 1;
        }
        if cf.var_mu2 > 0.0 {
            min_ratio = min_ratio.min(cf.var_mu1 / cf.var_mu2);
        }
    }
    let comparisons = vec![
        Comparison::new("closed-form violations", violations as f64, 0.0, 0.0, Rule::AtMost),
        Comparison::info("specs checked", count as f64),
        Comparison::info("smallest closed-form ratio", min_ratio),
    ];
    Ok(VerificationReport::new(
        Property::VarianceOrdering,
        None,
        count,
        0,
        seed,
        0.0,
        comparisons,
    ))
}

/// Variance reduction by `1/rho_b` under the independence assumption.
///
/// Errors unless `spec.assumption_satisfied()`.
pub fn verify_rho_factor(
    spec: &MixtureSpec,
    batch_size: usize,
    trials: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if !spec.assumption_satisfied() {
        return Err(Error::Precondition(format!(
            "the rho factor needs X^2 independent of the critical event, i.e. \
             var_a = var_b + |mean_b|^2 / dim (got var_a = {}, var_b = {})",
            spec.var_a(),
            spec.var_b()
        )));
    }
    let (v1, v2) = empirical_variances(spec, batch_size, trials, seed)?;
    let cf = closed_form_moments(spec);
    let comparisons = vec![
        Comparison::new(
            "closed-form ratio >= 1/rho",
            cf.ratio,
            1.0 / spec.rho_b(),
            1e-12,
            Rule::AtLeast,
        ),
        Comparison::new("empirical ratio", v1 / v2, cf.ratio, VARIANCE_RTOL, Rule::RelWithin),
    ];
    Ok(VerificationReport::new(
        Property::RhoFactor,
        Some(spec.clone()),
        trials,
        batch_size,
        seed,
        VARIANCE_RTOL,
        comparisons,
    ))
}

/// Empirical assumption residual against its analytic value
/// `rho (1 - rho) |E[|X|^2 | B] - E[|X|^2 | A]|`, gated at [`GATE_Z`] standard
/// errors of the residual's influence function.
pub fn verify_assumption_residual(
    spec: &MixtureSpec,
    n: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if n < 2 {
        return Err(Error::invalid("batch_size", "must be at least 2"));
    }
    let samples = sample_mixture_trial(spec, n, seed, 0)?;
    let nf = n as f64;
    let q: Vec<f64> = samples.iter().map(|s| squared_norm(&s.value)).collect();
    let b: Vec<f64> = samples
        .iter()
        .map(|s| if s.label.is_critical() { 1.0 } else { 0.0 })
        .collect();
    let q_bar = q.iter().sum::<f64>() / nf;
    let b_bar = b.iter().sum::<f64>() / nf;
    let qb_bar = q.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / nf;
    let signed = qb_bar - q_bar * b_bar;
    let influence: Vec<f64> = q
        .iter()
        .zip(&b)
        .map(|(&qi, &bi)| qi * bi - qi * b_bar - q_bar * bi)
        .collect();
    let se = (crate::stats::sample_variance(&influence) / nf).sqrt();

    let rho = spec.rho_b();
    let d = spec.dim() as f64;
    let second_b = d * spec.var_b() + squared_norm(spec.mean_b());
    let second_a = d * spec.var_a();
    let analytic = rho * (1.0 - rho) * (second_b - second_a);

    let comparisons = vec![
        Comparison::new("residual", signed.abs(), analytic.abs(), GATE_Z * se, Rule::AbsWithin),
        Comparison::info("residual standard error", se),
    ];
    Ok(VerificationReport::new(
        Property::AssumptionResidual,
        Some(spec.clone()),
        1,
        n,
        seed,
        GATE_Z,
        comparisons,
    ))
}

/// Empirical per-sample SNR of both estimators on one large batch, against
/// the closed forms.
pub fn verify_snr(spec: &MixtureSpec, n: usize, seed: u64) -> Result<VerificationReport> {
    if n < 2 {
        return Err(Error::invalid("batch_size", "must be at least 2"));
    }
    let samples = sample_mixture_trial(spec, n, seed, 0)?;
    let cf = closed_form_moments(spec);
    let e1: GradientEstimate = estimate_mu1(&samples)?;
    let e2: GradientEstimate = estimate_mu2(&samples)?;
    let s1 = crate::estimator::snr(&e1, &cf.mu)?;
    let s2 = crate::estimator::snr(&e2, &cf.mu)?;
    let comparisons = vec![
        Comparison::new("snr(mu1)", s1, cf.snr_mu1, VARIANCE_RTOL, Rule::RelWithin),
        Comparison::new("snr(mu2)", s2, cf.snr_mu2, VARIANCE_RTOL, Rule::RelWithin),
        Comparison::new("snr ratio", s2 / s1, cf.ratio, VARIANCE_RTOL, Rule::RelWithin),
    ];
    Ok(VerificationReport::new(
        Property::SnrCollapse,
        Some(spec.clone()),
        1,
        n,
        seed,
        VARIANCE_RTOL,
        comparisons,
    ))
}

/// Samples needed for `kind` to hit relative error `relative_error` at
/// confidence multiplier `confidence_z`:
/// `ceil(z^2 * var / (relative_error * |mu|)^2)`, at least 1.
pub fn required_sample_size(
    spec: &MixtureSpec,
    relative_error: f64,
    confidence_z: f64,
    kind: EstimatorKind,
) -> Result<u64> {
    if !(relative_error > 0.0 && relative_error.is_finite()) {
        return Err(Error::invalid("relative_error", "must be positive and finite"));
    }
    if !(confidence_z > 0.0 && confidence_z.is_finite()) {
        return Err(Error::invalid("confidence_z", "must be positive and finite"));
    }
    let cf = closed_form_moments(spec);
    let signal = squared_norm(&cf.mu);
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let n = ceil_tolerant(confidence_z * confidence_z * cf.variance(kind) / (relative_error * relative_error * signal));
    if n >= u64::MAX as f64 {
        return Err(Error::Overflow(n));
    }
    Ok((n as u64).max(1))
}

/// A curve with an OLS fit in the declared axes. Points flagged unreliable
/// are reported but left out of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    pub reliable: Vec<bool>,
    pub log_x: bool,
    pub log_y: bool,
    /// `None` when fewer than two reliable points exist.
    pub fitted_slope: Option<f64>,
    pub fit_intercept: Option<f64>,
    pub fit_r2: Option<f64>,
}

impl ScalingCurve {
    pub fn fit(
        x_values: Vec<f64>,
        y_values: Vec<f64>,
        reliable: Vec<bool>,
        log_x: bool,
        log_y: bool,
    ) -> Result<Self> {
        if x_values.is_empty() {
            return Err(Error::invalid("grid", "must not be empty"));
        }
        if x_values.len() != y_values.len() || x_values.len() != reliable.len() {
            return Err(Error::DimensionMismatch {
                expected: x_values.len(),
                found: y_values.len(),
            });
        }
        if x_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid", "must be strictly increasing"));
        }
        let tx = |v: f64| if log_x { v.ln() } else { v };
        let ty = |v: f64| if log_y { v.ln() } else { v };
        let (fx, fy): (Vec<f64>, Vec<f64>) = x_values
            .iter()
            .zip(&y_values)
            .zip(&reliable)
            .filter(|(_, &ok)| ok)
            .map(|((&x, &y), _)| (tx(x), ty(y)))
            .unzip();
        let fit = fit_line(&fx, &fy);
        Ok(ScalingCurve {
            x_values,
            y_values,
            reliable,
            log_x,
            log_y,
            fitted_slope: fit.map(|f| f.slope),
            fit_intercept: fit.map(|f| f.intercept),
            fit_r2: fit.map(|f| f.r2),
        })
    }
}

/// Parameters of the family of specs swept by [`longtail_curve`]: each grid
/// point uses `rho_b = rho`, critical mean `mean_b`, and
/// `var_b = var_a - mean_b^2` so the independence assumption holds with the
/// normal-event variance fixed at `var_a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongtailFamily {
    pub var_a: f64,
    pub mean_b: f64,
}

impl LongtailFamily {
    pub fn spec_at(&self, rho: f64) -> Result<MixtureSpec> {
        let var_b = self.var_a - self.mean_b * self.mean_b;
        if var_b < 0.0 {
            return Err(Error::invalid(
                "var_a",
                format!("{} is below mean_b^2 = {}", self.var_a, self.mean_b * self.mean_b),
            ));
        }
        MixtureSpec::independent_square(rho, vec![self.mean_b], var_b)
    }
}

/// Required sample size against event frequency, fitted on log-log axes.
pub fn longtail_curve(
    rho_grid: &[f64],
    family: LongtailFamily,
    relative_error: f64,
    confidence_z: f64,
    kind: EstimatorKind,
) -> Result<ScalingCurve> {
    if rho_grid.is_empty() {
        return Err(Error::invalid("rho_grid", "must not be empty"));
    }
    if let Some(bad) = rho_grid.iter().find(|&&r| !(r > 0.0 && r <= 0.5)) {
        return Err(Error::invalid("rho_grid", format!("{bad} is outside (0, 0.5]")));
    }
    let y = rho_grid
        .iter()
        .map(|&rho| {
            let spec = family.spec_at(rho)?;
            required_sample_size(&spec, relative_error, confidence_z, kind).map(|n| n as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    ScalingCurve::fit(rho_grid.to_vec(), y, vec![true; rho_grid.len()], true, true)
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}
