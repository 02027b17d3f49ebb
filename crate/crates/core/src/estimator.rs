//! Event-labeled gradient samples, the synthetic mixture they are drawn from,
//! and the full-population / event-filtered estimators.
//!
//! Event membership travels with each sample as an [`EventLabel`]. It is never
//! recomputed from the sample's value: two different events can produce the
//! same gradient value.
//!
//! Multi-dimensional samples are summarized by the trace of their covariance
//! (per-coordinate variances summed), and signal-to-noise ratios use the
//! squared norm of the mean over that trace.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::squared_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLabel {
    /// Event `A`: common, zero-mean contribution.
    Normal,
    /// Event `B`: rare, carries the signal.
    Critical,
}

impl EventLabel {
    pub fn is_critical(self) -> bool {
        matches!(self, EventLabel::Critical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub value: Vec<f64>,
    pub label: EventLabel,
}

impl LabeledSample {
    pub fn new(value: Vec<f64>, label: EventLabel) -> Self {
        LabeledSample { value, label }
    }

    pub fn scalar(value: f64, label: EventLabel) -> Self {
        LabeledSample {
            value: vec![value],
            label,
        }
    }
}

/// Distribution family used for both mixture components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentShape {
    #[default]
    Gaussian,
    /// Uniform with the same mean and variance as the Gaussian.
    Uniform,
}

/// Two-component mixture over gradient values.
///
/// With probability `rho_b` a sample is critical and drawn with mean `mean_b`
/// and per-coordinate variance `var_b`; otherwise it is normal, zero-mean, with
/// per-coordinate variance `var_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixtureSpec")]
pub struct MixtureSpec {
    rho_b: f64,
    mean_b: Vec<f64>,
    var_a: f64,
    var_b: f64,
    #[serde(default)]
    shape: ComponentShape,
}

#[derive(Deserialize)]
struct RawMixtureSpec {
    rho_b: f64,
    mean_b: Vec<f64>,
    var_a: f64,
    var_b: f64,
    #[serde(default)]
    shape: ComponentShape,
}

impl TryFrom<RawMixtureSpec> for MixtureSpec {
    type Error = Error;

    fn try_from(raw: RawMixtureSpec) -> Result<Self> {
        MixtureSpec::new(raw.rho_b, raw.mean_b, raw.var_a, raw.var_b).map(|s| s.with_shape(raw.shape))
    }
}

const ASSUMPTION_RTOL: f64 = 1e-12;

impl MixtureSpec {
    pub fn new(rho_b: f64, mean_b: Vec<f64>, var_a: f64, var_b: f64) -> Result<Self> {
        if !(rho_b > 0.0 && rho_b <= 1.0) {
            return Err(Error::invalid("rho_b", format!("{rho_b} is outside (0, 1]")));
        }
        if mean_b.is_empty() {
            return Err(Error::invalid("mean_b", "dimension must be positive"));
        }
        if mean_b.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mean_b", "entries must be finite"));
        }
        if mean_b.iter().all(|&m| m == 0.0) {
            return Err(Error::invalid(
                "mean_b",
                "critical component mean must be nonzero",
            ));
        }
        for (field, v) in [("var_a", var_a), ("var_b", var_b)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, format!("{v} is not a finite nonnegative variance")));
            }
        }
        Ok(MixtureSpec {
            rho_b,
            mean_b,
            var_a,
            var_b,
            shape: ComponentShape::Gaussian,
        })
    }

    pub fn scalar(rho_b: f64, mean_b: f64, var_a: f64, var_b: f64) -> Result<Self> {
        Self::new(rho_b, vec![mean_b], var_a, var_b)
    }

    /// Spec whose normal-component variance makes `X^2` independent of the
    /// critical event: `var_a = var_b + |mean_b|^2 / dim`.
    pub fn independent_square(rho_b: f64, mean_b: Vec<f64>, var_b: f64) -> Result<Self> {
        let var_a = var_b + squared_norm(&mean_b) / mean_b.len().max(1) as f64;
        Self::new(rho_b, mean_b, var_a, var_b)
    }

    /// The default spec used throughout the verification suite:
    /// `rho_b = 0.01, m = 1, var_b = 1, var_a = 2`.
    pub fn canonical() -> Self {
        Self::scalar(0.01, 1.0, 2.0, 1.0).expect("canonical spec is valid")
    }

    pub fn with_shape(mut self, shape: ComponentShape) -> Self {
        self.shape = shape;
        self
    }

    pub fn rho_b(&self) -> f64 {
        self.rho_b
    }

    pub fn mean_b(&self) -> &[f64] {
        &self.mean_b
    }

    pub fn var_a(&self) -> f64 {
        self.var_a
    }

    pub fn var_b(&self) -> f64 {
        self.var_b
    }

    pub fn shape(&self) -> ComponentShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.mean_b.len()
    }

    /// Whether `E[|X|^2 1_B] = E[|X|^2] E[1_B]` holds exactly for this spec.
    pub fn assumption_satisfied(&self) -> bool {
        let target = self.var_b + squared_norm(&self.mean_b) / self.dim() as f64;
        (self.var_a - target).abs() <= ASSUMPTION_RTOL * self.var_a.abs().max(target.abs()).max(1.0)
    }

    fn draw_component<R: Rng>(&self, rng: &mut R, mean: Option<&[f64]>, var: f64) -> Vec<f64> {
        let sd = var.sqrt();
        (0..self.dim())
            .map(|j| {
                let z: f64 = match self.shape {
                    ComponentShape::Gaussian => rng.sample(StandardNormal),
                    ComponentShape::Uniform => (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt(),
                };
                mean.map_or(0.0, |m| m[j]) + sd * z
            })
            .collect()
    }

    /// Draws one labeled sample from `rng`: one uniform for the label, then
    /// `dim` component draws.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> LabeledSample {
        if rng.random::<f64>() < self.rho_b {
            LabeledSample::new(
                self.draw_component(rng, Some(&self.mean_b), self.var_b),
                EventLabel::Critical,
            )
        } else {
            LabeledSample::new(self.draw_component(rng, None, self.var_a), EventLabel::Normal)
        }
    }
}

/// `n` samples from stream 0 under `seed`.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    sample_mixture_trial(spec, n, seed, 0)
}

/// `n` samples from the stream keyed by `(seed, trial)`.
pub fn sample_mixture_trial(
    spec: &MixtureSpec,
    n: usize,
    seed: u64,
    trial: u64,
) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::invalid("n", "batch size must be at least 1"));
    }
    let mut rng = rng::stream(seed, trial);
    Ok((0..n).map(|_| spec.draw(&mut rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Full-population mean.
    Mu1,
    /// Critical-only sum over the total batch size.
    Mu2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub mean: Vec<f64>,
    /// Trace of the Bessel-corrected per-sample covariance of the summands.
    pub sample_variance: f64,
    pub n: usize,
    pub kind: EstimatorKind,
    /// Set for single-sample batches, whose variance is reported as zero.
    pub degenerate: bool,
}

impl GradientEstimate {
    /// Builds an estimate from per-sample summands (already zeroed where a
    /// filter excludes them). The divisor is always `rows.len()`.
    pub fn from_summands<R: AsRef<[f64]>>(rows: &[R], kind: EstimatorKind) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyBatch)?;
        let dim = first.as_ref().len();
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
        }
        let mean = crate::stats::column_means(rows);
        let sample_variance = crate::stats::column_variances(rows, &mean).iter().sum();
        Ok(GradientEstimate {
            mean,
            sample_variance,
            n: rows.len(),
            kind,
            degenerate: rows.len() == 1,
        })
    }

    /// Estimated variance of the estimator itself, `sample_variance / n`.
    pub fn variance_of_mean(&self) -> f64 {
        self.sample_variance / self.n as f64
    }
}

fn validate_batch(samples: &[LabeledSample]) -> Result<usize> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    let dim = first.value.len();
    for (i, s) in samples.iter().enumerate() {
        if s.value.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.value.len(),
            });
        }
        if s.value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
    }
    Ok(dim)
}

fn estimate_filtered(
    samples: &[LabeledSample],
    kind: EstimatorKind,
    keep: impl Fn(&LabeledSample) -> bool,
) -> Result<GradientEstimate> {
    let dim = validate_batch(samples)?;
    let n = samples.len();
    let mut mean = vec![0.0; dim];
    for s in samples.iter().filter(|s| keep(s)) {
        for (m, x) in mean.iter_mut().zip(&s.value) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let sample_variance = if n < 2 {
        0.0
    } else {
        let mut ss = 0.0;
        for s in samples {
            let kept = keep(s);
            for (j, m) in mean.iter().enumerate() {
                let y = if kept { s.value[j] } else { 0.0 };
                ss += (y - m) * (y - m);
            }
        }
        ss / (n - 1) as f64
    };

    Ok(GradientEstimate {
        mean,
        sample_variance,
        n,
        kind,
        degenerate: n == 1,
    })
}

/// Full-population estimator: the plain mean of every sample.
pub fn estimate_mu1(samples: &[LabeledSample]) -> Result<GradientEstimate> {
    estimate_filtered(samples, EstimatorKind::Mu1, |_| true)
}

/// Event-filtered estimator: critical samples summed, divided by the total
/// batch size. Normal samples enter the divisor and nothing else.
pub fn estimate_mu2(samples: &[LabeledSample]) -> Result<GradientEstimate> {
    estimate_filtered(samples, EstimatorKind::Mu2, |s| s.label.is_critical())
}

/// Analytic moments of both estimators under a [`MixtureSpec`].
///
/// Variances are per-sample (`n = 1`) and trace-aggregated over coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormMoments {
    pub mu: Vec<f64>,
    pub var_mu1: f64,
    pub var_mu2: f64,
    pub snr_mu1: f64,
    pub snr_mu2: f64,
    pub ratio: f64,
}

impl ClosedFormMoments {
    pub fn variance(&self, kind: EstimatorKind) -> f64 {
        match kind {
            EstimatorKind::Mu1 => self.var_mu1,
            EstimatorKind::Mu2 => self.var_mu2,
        }
    }
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Per-coordinate variances `(Var[X_j], Var[X_j 1_B])` for one sample.
pub fn coordinate_variances(spec: &MixtureSpec) -> Vec<(f64, f64)> {
    let rho = spec.rho_b;
    spec.mean_b
        .iter()
        .map(|&m| {
            let critical_second = rho * (spec.var_b + m * m);
            let signal = rho * rho * m * m;
            let var2 = (critical_second - signal).max(0.0);
            let var1 = ((1.0 - rho) * spec.var_a + critical_second - signal).max(0.0);
            (var1, var2)
        })
        .collect()
}

pub fn closed_form_moments(spec: &MixtureSpec) -> ClosedFormMoments {
    let mu: Vec<f64> = spec.mean_b.iter().map(|m| spec.rho_b * m).collect();
    let (var_mu1, var_mu2) = coordinate_variances(spec)
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (v1, v2)| (a + v1, b + v2));
    let signal = squared_norm(&mu);
    ClosedFormMoments {
        snr_mu1: safe_div(signal, var_mu1),
        snr_mu2: safe_div(signal, var_mu2),
        ratio: if var_mu1 == var_mu2 {
            1.0
        } else {
            safe_div(var_mu1, var_mu2)
        },
        mu,
        var_mu1,
        var_mu2,
    }
}

/// Empirical departure from `E[|X|^2 1_B] = E[|X|^2] E[1_B]`:
/// `|mean(|X|^2 1_B) - mean(|X|^2) * mean(1_B)|`.
pub fn check_assumption(samples: &[LabeledSample]) -> Result<f64> {
    validate_batch(samples)?;
    let n = samples.len() as f64;
    let (mut sq, mut sq_b, mut count_b) = (0.0, 0.0, 0.0);
    for s in samples {
        let q = squared_norm(&s.value);
        sq += q;
        if s.label.is_critical() {
            sq_b += q;
            count_b += 1.0;
        }
    }
    Ok((sq_b / n - (sq / n) * (count_b / n)).abs())
}

/// `|true_mu|^2 / sample_variance`.
pub fn snr(estimate: &GradientEstimate, true_mu: &[f64]) -> Result<f64> {
    if true_mu.len() != estimate.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: estimate.mean.len(),
            found: true_mu.len(),
        });
    }
    if estimate.sample_variance <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(squared_norm(true_mu) / estimate.sample_variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EventLabel::{Critical, Normal};

    fn batch(values: &[(f64, EventLabel)]) -> Vec<LabeledSample> {
        values
            .iter()
            .map(|&(v, l)| LabeledSample::scalar(v, l))
            .collect()
    }

    #[test]
    fn mu1_is_plain_mean() {
        let b = batch(&[(1.0, Normal), (2.0, Critical), (3.0, Normal)]);
        let est = estimate_mu1(&b).unwrap();
        assert_eq!(est.mean, vec![2.0]);
        assert_eq!(est.sample_variance, 1.0);
        assert_eq!(est.kind, EstimatorKind::Mu1);
    }

    #[test]
    fn mu2_divides_by_total_batch() {
        let b = batch(&[(5.0, Critical), (7.0, Normal), (-2.0, Normal), (3.0, Critical)]);
        let brute: f64 = b
            .iter()
            .map(|s| if s.label == Critical { s.value[0] } else { 0.0 })
            .sum::<f64>()
            / b.len() as f64;
        let est = estimate_mu2(&b).unwrap();
        assert_eq!(est.mean, vec![brute]);
        assert_eq!(est.mean, vec![2.0]);
        assert_eq!(est.n, 4);
        // summands are [5, 0, 0, 3]
        assert!((est.sample_variance - 6.0).abs() < 1e-12);
    }

    #[test]
    fn mu2_of_all_normal_batch_is_zero() {
        let b = batch(&[(1.5, Normal); 10]);
        let est = estimate_mu2(&b).unwrap();
        assert_eq!(est.mean, vec![0.0]);
        assert_eq!(est.sample_variance, 0.0);
    }

    #[test]
    fn single_sample_is_degenerate_not_an_error() {
        let est = estimate_mu1(&batch(&[(4.25, Normal)])).unwrap();
        assert_eq!(est.mean, vec![4.25]);
        assert_eq!(est.sample_variance, 0.0);
        assert!(est.degenerate);
        assert_eq!(snr(&est, &[1.0]), Err(Error::ZeroVariance));
    }

    #[test]
    fn batch_errors() {
        assert_eq!(estimate_mu1(&[]), Err(Error::EmptyBatch));
        assert_eq!(estimate_mu2(&[]), Err(Error::EmptyBatch));
        assert_eq!(check_assumption(&[]), Err(Error::EmptyBatch));
        let ragged = vec![
            LabeledSample::new(vec![1.0, 2.0], Normal),
            LabeledSample::new(vec![1.0], Normal),
        ];
        assert!(matches!(
            estimate_mu1(&ragged),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        let nan = batch(&[(1.0, Normal), (f64::NAN, Critical)]);
        assert_eq!(estimate_mu2(&nan), Err(Error::NonFinite { index: 1 }));
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            MixtureSpec::scalar(1.5, 1.0, 2.0, 1.0),
            Err(Error::Invalid { field: "rho_b", .. })
        ));
        assert!(matches!(
            MixtureSpec::scalar(0.0, 1.0, 2.0, 1.0),
            Err(Error::Invalid { field: "rho_b", .. })
        ));
        assert!(matches!(
            MixtureSpec::new(0.1, vec![], 2.0, 1.0),
            Err(Error::Invalid { field: "mean_b", .. })
        ));
        assert!(matches!(
            MixtureSpec::scalar(0.1, 0.0, 2.0, 1.0),
            Err(Error::Invalid { field: "mean_b", .. })
        ));
        assert!(matches!(
            MixtureSpec::scalar(0.1, 1.0, -1.0, 1.0),
            Err(Error::Invalid { field: "var_a", .. })
        ));
        assert!(MixtureSpec::canonical().assumption_satisfied());
        assert!(!MixtureSpec::scalar(0.01, 1.0, 10.0, 1.0).unwrap().assumption_satisfied());
        let multi = MixtureSpec::independent_square(0.2, vec![1.0, 3.0], 0.5).unwrap();
        assert_eq!(multi.var_a(), 5.5);
        assert!(multi.assumption_satisfied());
    }

    #[test]
    fn spec_deserialization_validates() {
        let err = serde_json::from_str::<MixtureSpec>(
            r#"{"rho_b": 1.5, "mean_b": [1.0], "var_a": 2.0, "var_b": 1.0}"#,
        );
        assert!(err.unwrap_err().to_string().contains("rho_b"));
        let ok: MixtureSpec = serde_json::from_str(
            r#"{"rho_b": 0.01, "mean_b": [1.0], "var_a": 2.0, "var_b": 1.0}"#,
        )
        .unwrap();
        assert_eq!(ok, MixtureSpec::canonical());
    }

    #[test]
    fn rho_one_labels_everything_critical() {
        let spec = MixtureSpec::scalar(1.0, 1.0, 2.0, 1.0).unwrap();
        let s = sample_mixture(&spec, 100, 3).unwrap();
        assert!(s.iter().all(|x| x.label == Critical));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = MixtureSpec::canonical();
        assert_eq!(
            sample_mixture(&spec, 1000, 42).unwrap(),
            sample_mixture(&spec, 1000, 42).unwrap()
        );
        assert_ne!(
            sample_mixture(&spec, 1000, 42).unwrap(),
            sample_mixture(&spec, 1000, 43).unwrap()
        );
        assert!(sample_mixture(&spec, 0, 1).is_err());
    }

    #[test]
    fn critical_fraction_matches_rho() {
        // binomial bound: 0.01 +- 3 * sqrt(0.01 * 0.99 / 1e6) = 0.01 +- 2.985e-4
        let spec = MixtureSpec::canonical();
        let s = sample_mixture(&spec, 1_000_000, 11).unwrap();
        let frac = s.iter().filter(|x| x.label == Critical).count() as f64 / 1e6;
        let bound = 3.0 * (0.01f64 * 0.99 / 1e6).sqrt();
        assert!((bound - 2.985e-4).abs() < 1e-6);
        assert!((frac - 0.01).abs() < bound, "fraction {frac}");
    }

    #[test]
    fn closed_form_canonical_values() {
        let cf = closed_form_moments(&MixtureSpec::canonical());
        assert!((cf.mu[0] - 0.01).abs() < 1e-15);
        assert!((cf.var_mu1 - 1.9999).abs() < 1e-12);
        assert!((cf.var_mu2 - 0.0199).abs() < 1e-12);
        assert!((cf.ratio - 1.9999 / 0.0199).abs() < 1e-9);
        assert!((cf.ratio - 100.497).abs() < 1e-3);
        assert!(cf.ratio >= 100.0);
        assert!((cf.snr_mu1 - 1e-4 / 1.9999).abs() < 1e-15);
        assert!((cf.snr_mu2 - 1e-4 / 0.0199).abs() < 1e-12);
        assert!((cf.snr_mu2 / cf.snr_mu1 - cf.ratio).abs() < 1e-9);
    }

    #[test]
    fn closed_form_rho_one_collapses() {
        let cf = closed_form_moments(&MixtureSpec::scalar(1.0, 1.0, 2.0, 1.0).unwrap());
        assert_eq!(cf.var_mu1, cf.var_mu2);
        assert_eq!(cf.ratio, 1.0);
    }

    // Brute-force oracle: second moments of the mixture by direct
    // enumeration of the two components.
    fn brute_moments(spec: &MixtureSpec) -> (f64, f64) {
        let rho = spec.rho_b();
        let d = spec.dim() as f64;
        let mm = squared_norm(spec.mean_b());
        let e_sq_b = d * spec.var_b() + mm;
        let e_sq_a = d * spec.var_a();
        let e_sq = (1.0 - rho) * e_sq_a + rho * e_sq_b;
        let mean_sq = rho * rho * mm;
        (e_sq - mean_sq, rho * e_sq_b - mean_sq)
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        // 1e7 samples: relative error of a variance estimate is well under 1%
        // for var_mu1; var_mu2 rests on ~1e5 critical samples.
        let spec = MixtureSpec::canonical();
        let s = sample_mixture(&spec, 10_000_000, 5).unwrap();
        let e1 = estimate_mu1(&s).unwrap();
        let e2 = estimate_mu2(&s).unwrap();
        let cf = closed_form_moments(&spec);
        assert!((e1.sample_variance / cf.var_mu1 - 1.0).abs() < 0.01);
        assert!((e2.sample_variance / cf.var_mu2 - 1.0).abs() < 0.02);
        let se = (cf.var_mu1 / 1e7).sqrt();
        assert!((e1.mean[0] - 0.01).abs() < 4.0 * se);
    }

    #[test]
    fn mu1_mean_within_four_standard_errors() {
        let spec = MixtureSpec::canonical();
        let s = sample_mixture(&spec, 100_000, 17).unwrap();
        let e = estimate_mu1(&s).unwrap();
        let se = (1.9999f64 / 1e5).sqrt();
        assert!((e.mean[0] - 0.01).abs() < 4.0 * se);
    }

    #[test]
    fn assumption_residual() {
        // canonical: analytic residual 0; MC standard error at 1e6 is ~4e-4
        let s = sample_mixture(&MixtureSpec::canonical(), 1_000_000, 8).unwrap();
        assert!(check_assumption(&s).unwrap() < 0.01);

        // var_a = 10: rho (1 - rho) |var_b + m^2 - var_a| = 0.0099 * 8
        let spec = MixtureSpec::scalar(0.01, 1.0, 10.0, 1.0).unwrap();
        let s = sample_mixture(&spec, 1_000_000, 8).unwrap();
        let r = check_assumption(&s).unwrap();
        assert!((r - 0.0792).abs() < 0.01, "residual {r}");

        let all_b = batch(&[(1.0, Critical), (-3.0, Critical), (2.0, Critical)]);
        assert!(check_assumption(&all_b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn snr_values() {
        let est = GradientEstimate {
            mean: vec![0.0],
            sample_variance: 2.0,
            n: 10,
            kind: EstimatorKind::Mu1,
            degenerate: false,
        };
        assert_eq!(snr(&est, &[0.0]).unwrap(), 0.0);
        assert!(snr(&est, &[1.0, 2.0]).is_err());

        let spec = MixtureSpec::canonical();
        let s = sample_mixture(&spec, 2_000_000, 21).unwrap();
        let cf = closed_form_moments(&spec);
        let s1 = snr(&estimate_mu1(&s).unwrap(), &cf.mu).unwrap();
        let s2 = snr(&estimate_mu2(&s).unwrap(), &cf.mu).unwrap();
        assert!((s1 / 5.0e-5 - 1.0).abs() < 0.02, "snr1 {s1}");
        assert!((s2 / 5.03e-3 - 1.0).abs() < 0.05, "snr2 {s2}");
        assert!((s2 / s1 / cf.ratio - 1.0).abs() < 0.05);
    }

    fn arb_spec() -> impl Strategy<Value = MixtureSpec> {
        (
            1e-4f64..=1.0,
            prop::collection::vec(-5.0f64..5.0, 1..4),
            0.0f64..10.0,
            0.0f64..10.0,
        )
            .prop_filter_map("nonzero mean", |(rho, m, va, vb)| {
                MixtureSpec::new(rho, m, va, vb).ok()
            })
    }

    proptest! {
        #[test]
        fn closed_form_ordering_holds(spec in arb_spec()) {
            let cf = closed_form_moments(&spec);
            prop_assert!(cf.var_mu2 <= cf.var_mu1 * (1.0 + 1e-12) + 1e-15);
            let (b1, b2) = brute_moments(&spec);
            prop_assert!((cf.var_mu1 - b1).abs() <= 1e-9 * b1.abs().max(1.0));
            prop_assert!((cf.var_mu2 - b2).abs() <= 1e-9 * b2.abs().max(1.0));
        }

        #[test]
        fn rho_factor_holds_under_assumption(
            rho in 1e-4f64..=1.0,
            m in prop::collection::vec(-5.0f64..5.0, 1..4),
            vb in 0.0f64..10.0,
        ) {
            prop_assume!(m.iter().any(|&x| x != 0.0));
            let spec = MixtureSpec::independent_square(rho, m, vb).unwrap();
            prop_assert!(spec.assumption_satisfied());
            let cf = closed_form_moments(&spec);
            prop_assert!(cf.var_mu1 * (1.0 + 1e-12) >= cf.var_mu2 / rho);
        }

        #[test]
        fn mu2_equals_mu1_on_all_critical(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let b: Vec<_> = values.iter().map(|&v| LabeledSample::scalar(v, Critical)).collect();
            prop_assert_eq!(estimate_mu1(&b).unwrap().mean, estimate_mu2(&b).unwrap().mean);
        }

        #[test]
        fn variance_nonnegative(values in prop::collection::vec((-1e3f64..1e3, any::<bool>()), 1..50)) {
            let b: Vec<_> = values
                .iter()
                .map(|&(v, c)| LabeledSample::scalar(v, if c { Critical } else { Normal }))
                .collect();
            prop_assert!(estimate_mu1(&b).unwrap().sample_variance >= 0.0);
            prop_assert!(estimate_mu2(&b).unwrap().sample_variance >= 0.0);
        }
    }
}
