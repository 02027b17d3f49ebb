//! Rare-event gradient estimation.
//!
//! A gradient sample `X` is tagged with the event it came from: the common
//! event `A`, whose contributions average to zero, or the rare critical event
//! `B`, which carries the whole signal. Two estimators of `E[X]` are compared:
//!
//! * the full-population mean `mu1 = (1/n) * sum X_i`
//! * the event-filtered mean `mu2 = (1/n) * sum X_i * 1_B(X_i)`
//!
//! Both are unbiased; `mu2` never has larger variance, and when `X^2` is
//! independent of `B` its variance is smaller by the factor `rho_B = P(B)`.
//! [`estimator`] holds the sample model and both estimators, [`theorem`] the
//! Monte Carlo verification experiments and sample-size scaling laws, and
//! [`importance`] the high-dimensional importance-sampling sweep.

pub mod error;
pub mod estimator;
pub mod importance;
pub mod rng;
pub mod stats;
pub mod theorem;

pub use error::{Error, Result};
pub use estimator::{
    check_assumption, closed_form_moments, estimate_mu1, estimate_mu2, sample_mixture,
    sample_mixture_trial, snr, ClosedFormMoments, ComponentShape, EstimatorKind, EventLabel,
    GradientEstimate, LabeledSample, MixtureSpec,
};
pub use theorem::{
    longtail_curve, required_sample_size, verify_assumption_residual,
    verify_closed_form_ordering, verify_rho_factor, verify_snr, verify_unbiasedness,
    verify_unbiasedness_with, verify_variance_ordering, Comparison, FilterDivisor,
    LongtailFamily, Property, Rule, ScalingCurve, VerificationReport,
};
