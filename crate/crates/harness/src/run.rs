//! Dispatch from a config to the owning module.
//!
//! Seeds: every sub-experiment gets `derive_seed(master, [label_key(kind),
//! index...])`, and the modules derive per-trial streams from that, so two
//! experiment kinds never share a stream even with the same master seed.

use rarity_core::estimator::EstimatorKind;
use rarity_core::importance::{curve_from_points, is_second_moment, is_sweep_points};
use rarity_core::rng::{derive_seed, label_key};
use rarity_core::theorem::{
    log_grid, longtail_curve, verify_closed_form_ordering, verify_rho_factor, verify_snr,
    verify_unbiasedness_with, verify_variance_ordering, Comparison, Property, Rule,
    VerificationReport, GATE_Z,
};
use rarity_core::MixtureSpec;
use rarity_sim::{
    compare_training, gradient_oracle_check, gradient_variance_comparison, train, GradientMode,
    LearningCurve, PolicyParams, TrainingStatus,
};

use crate::config::{Experiment, ExperimentConfig, GradCompare, IsDim, Longtail, SnrSweep, Train, VerifyTheorem};
use crate::error::Result;
use crate::table::{Cell, Table};

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub reports: Vec<VerificationReport>,
    /// Kind-specific tables; `reports` and `comparisons` tables are derived
    /// from `reports` on output.
    pub tables: Vec<Table>,
    /// Extra human-readable lines for the summary.
    pub notes: Vec<String>,
    pub pass: bool,
}

impl ExperimentResult {
    /// Every table that gets written, in a fixed order.
    pub fn all_tables(&self) -> Vec<Table> {
        let mut reports = Table::new(
            "reports",
            &["report", "property", "trials", "batch_size", "seed", "tolerance", "pass"],
        );
        let mut comparisons = Table::new(
            "comparisons",
            &["report", "property", "name", "empirical", "reference", "tolerance", "rule", "pass"],
        );
        for (i, r) in self.reports.iter().enumerate() {
            reports.push(vec![
                i.into(),
                r.property.label().into(),
                r.trials.into(),
                r.batch_size.into(),
                r.seed.into(),
                r.tolerance.into(),
                r.pass.into(),
            ]);
            for c in &r.comparisons {
                comparisons.push(vec![
                    i.into(),
                    r.property.label().into(),
                    c.name.as_str().into(),
                    c.empirical.into(),
                    c.reference.into(),
                    c.tolerance.into(),
                    rule_name(c.rule).into(),
                    c.passes().into(),
                ]);
            }
        }
        let mut out = self.tables.clone();
        out.push(reports);
        out.push(comparisons);
        out
    }
}

pub fn rule_name(rule: Rule) -> &'static str {
    match rule {
        Rule::AbsWithin => "abs_within",
        Rule::RelWithin => "rel_within",
        Rule::AtMost => "at_most",
        Rule::AtLeast => "at_least",
        Rule::Info => "info",
    }
}

pub fn mode_name(mode: GradientMode) -> &'static str {
    match mode {
        GradientMode::Full => "full",
        GradientMode::FilteredEpisode => "filtered_episode",
        GradientMode::FilteredWindow => "filtered_window",
    }
}

struct Seeds {
    root: u64,
}

impl Seeds {
    fn new(master: u64, kind: &str) -> Self {
        Seeds {
            root: derive_seed(master, &[label_key(kind)]),
        }
    }

    fn at(&self, parts: &[u64]) -> u64 {
        derive_seed(self.root, parts)
    }
}

/// Runs the experiment on the current rayon pool.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let seeds = Seeds::new(config.seed, config.experiment.kind());
    let (reports, tables, notes, extra_pass) = match &config.experiment {
        Experiment::VerifyTheorem(v) => verify_theorem(v, &seeds)?,
        Experiment::SnrSweep(s) => snr_sweep(s, &seeds)?,
        Experiment::Longtail(l) => longtail(l)?,
        Experiment::IsDim(i) => is_dim(i, &seeds)?,
        Experiment::GradCompare(g) => grad_compare(g, &seeds)?,
        Experiment::Train(t) => run_train(t, &seeds)?,
    };
    let pass = extra_pass && reports.iter().all(|r| r.pass);
    Ok(ExperimentResult {
        config: config.clone(),
        reports,
        tables,
        notes,
        pass,
    })
}

type Parts = (Vec<VerificationReport>, Vec<Table>, Vec<String>, bool);

fn verify_theorem(v: &VerifyTheorem, seeds: &Seeds) -> Result<Parts> {
    let mut reports = vec![
        verify_unbiasedness_with(
            &v.spec,
            v.unbiasedness.batch,
            v.unbiasedness.trials,
            seeds.at(&[0]),
            v.divisor,
        )?,
        verify_variance_ordering(&v.spec, v.variance.batch, v.variance.trials, seeds.at(&[1]))?,
    ];
    if v.closed_form_specs > 0 {
        reports.push(verify_closed_form_ordering(v.closed_form_specs, seeds.at(&[2]))?);
    }
    let plan = &v.rho_factor;
    for (i, &rho) in plan.rhos.iter().enumerate() {
        let spec = MixtureSpec::independent_square(rho, plan.mean_b.clone(), plan.var_b)?;
        reports.push(verify_rho_factor(&spec, plan.batch, plan.trials, seeds.at(&[3, i as u64]))?);
    }
    Ok((reports, vec![], vec![], true))
}

fn snr_sweep(s: &SnrSweep, seeds: &Seeds) -> Result<Parts> {
    let mut table = Table::new(
        "snr",
        &[
            "rho_b",
            "snr_mu1",
            "snr_mu1_closed_form",
            "snr_mu2",
            "snr_mu2_closed_form",
            "snr_ratio",
            "variance_ratio_closed_form",
            "pass",
        ],
    );
    let mut reports = Vec::with_capacity(s.rhos.len());
    for (i, &rho) in s.rhos.iter().enumerate() {
        let spec = s.family.spec_at(rho)?;
        let r = verify_snr(&spec, s.samples, seeds.at(&[i as u64]))?;
        let get = |name: &str| r.comparison(name).expect("snr report comparisons");
        table.push(vec![
            rho.into(),
            get("snr(mu1)").empirical.into(),
            get("snr(mu1)").reference.into(),
            get("snr(mu2)").empirical.into(),
            get("snr(mu2)").reference.into(),
            get("snr ratio").empirical.into(),
            get("snr ratio").reference.into(),
            r.pass.into(),
        ]);
        reports.push(r);
    }
    Ok((reports, vec![table], vec![], true))
}

fn longtail(l: &Longtail) -> Result<Parts> {
    let grid = log_grid(l.rho_min, l.rho_max, l.points);
    let c1 = longtail_curve(&grid, l.family, l.relative_error, l.confidence_z, EstimatorKind::Mu1)?;
    let c2 = longtail_curve(&grid, l.family, l.relative_error, l.confidence_z, EstimatorKind::Mu2)?;
    let mut table = Table::new("longtail", &["rho_b", "required_n_mu1", "required_n_mu2"]);
    for i in 0..grid.len() {
        table.push(vec![
            grid[i].into(),
            (c1.y_values[i] as u64).into(),
            (c2.y_values[i] as u64).into(),
        ]);
    }
    let mut fit = Table::new(
        "fit",
        &["estimator", "slope", "intercept", "r2", "expected_slope", "tolerance", "pass"],
    );
    let mut comparisons = Vec::new();
    for (name, curve, expected) in [("mu1", &c1, -2.0), ("mu2", &c2, -1.0)] {
        let slope = curve.fitted_slope.unwrap_or(f64::NAN);
        let c = Comparison::new(
            format!("log-log slope {name}"),
            slope,
            expected,
            l.slope_tolerance,
            Rule::AbsWithin,
        );
        fit.push(vec![
            name.into(),
            curve.fitted_slope.into(),
            curve.fit_intercept.into(),
            curve.fit_r2.into(),
            expected.into(),
            l.slope_tolerance.into(),
            c.passes().into(),
        ]);
        comparisons.push(c);
        comparisons.push(Comparison::info(format!("r2 {name}"), curve.fit_r2.unwrap_or(f64::NAN)));
    }
    let report = VerificationReport::new(
        Property::LongtailScaling,
        None,
        1,
        0,
        0,
        l.slope_tolerance,
        comparisons,
    );
    Ok((vec![report], vec![table, fit], vec![], true))
}

fn is_dim(i: &IsDim, seeds: &Seeds) -> Result<Parts> {
    let points = is_sweep_points(&i.dims, i.shift, i.samples, i.trials, seeds.at(&[0]))?;
    let curve = curve_from_points(&points)?;
    let mut table = Table::new(
        "points",
        &["dim", "shift", "samples", "mean_w2", "std_error", "analytic", "log_mean_w2", "reliable"],
    );
    for p in &points {
        table.push(vec![
            p.dim.into(),
            p.shift.into(),
            p.samples.into(),
            p.mean_w2.into(),
            p.std_error.into(),
            p.analytic.into(),
            p.mean_w2.ln().into(),
            p.reliable.into(),
        ]);
    }
    let reliable = points.iter().filter(|p| p.reliable).count();
    let mut comparisons = vec![
        Comparison::new(
            "slope of ln E[w^2] vs dim",
            curve.fitted_slope.unwrap_or(f64::NAN),
            i.shift * i.shift,
            i.slope_rtol,
            Rule::RelWithin,
        ),
        Comparison::new("fit r2", curve.fit_r2.unwrap_or(f64::NAN), i.min_r2, 0.0, Rule::AtLeast),
        Comparison::info("reliable points", reliable as f64),
        Comparison::info("fit intercept", curve.fit_intercept.unwrap_or(f64::NAN)),
    ];
    let mut tables = vec![table];
    if let Some(a) = i.anchor {
        let est = is_second_moment(a.dim, a.shift, i.samples, i.trials, seeds.at(&[1]))?;
        comparisons.push(Comparison::new(
            format!("E[w^2] at dim {} shift {}", a.dim, a.shift),
            est.mean_w2,
            est.analytic,
            GATE_Z * est.std_error,
            Rule::AbsWithin,
        ));
        let mut anchor = Table::new(
            "anchor",
            &["dim", "shift", "samples", "mean_w2", "std_error", "analytic"],
        );
        anchor.push(vec![
            est.dim.into(),
            est.shift.into(),
            est.samples.into(),
            est.mean_w2.into(),
            est.std_error.into(),
            est.analytic.into(),
        ]);
        tables.push(anchor);
    }
    let report = VerificationReport::new(
        Property::DimensionScaling,
        None,
        i.trials,
        i.samples,
        seeds.at(&[0]),
        i.slope_rtol,
        comparisons,
    );
    Ok((vec![report], tables, vec![], true))
}

fn grad_compare(g: &GradCompare, seeds: &Seeds) -> Result<Parts> {
    let mut reports = Vec::new();
    if let Some(v) = &g.variance {
        reports.push(gradient_variance_comparison(
            &v.env,
            &PolicyParams::new(v.theta),
            v.baseline,
            v.batch,
            v.trials,
            seeds.at(&[0]),
        )?);
    }
    if let Some(o) = &g.oracle {
        reports.push(gradient_oracle_check(
            &o.env,
            &PolicyParams::new(o.theta),
            o.baseline,
            o.batch,
            o.fd_episodes,
            o.epsilon,
            seeds.at(&[1]),
        )?);
    }
    Ok((reports, vec![], vec![], true))
}

fn curve_tables(curves: &[LearningCurve]) -> (Table, Table) {
    let mut points = Table::new(
        "curve",
        &[
            "seed",
            "mode",
            "iteration",
            "crash_rate",
            "theta_0",
            "theta_1",
            "theta_2",
            "critical_fraction",
            "baseline",
            "gradient_0",
            "gradient_1",
            "gradient_2",
            "gradient_variance",
        ],
    );
    let mut runs = Table::new(
        "runs",
        &["seed", "mode", "status", "stopped_at", "initial_crash_rate", "final_crash_rate"],
    );
    for c in curves {
        for p in &c.points {
            let g = p.gradient.as_ref();
            let coord = |k: usize| Cell::from(g.map(|g| g.mean[k]));
            points.push(vec![
                c.seed.into(),
                mode_name(c.mode).into(),
                p.iteration.into(),
                p.crash_rate.into(),
                p.theta[0].into(),
                p.theta[1].into(),
                p.theta[2].into(),
                p.critical_fraction.into(),
                p.baseline.into(),
                coord(0),
                coord(1),
                coord(2),
                g.map(|g| g.sample_variance).into(),
            ]);
        }
        let (status, stopped) = match c.status {
            TrainingStatus::Completed => ("completed", None),
            TrainingStatus::Diverged { iteration, .. } => ("diverged", Some(iteration)),
        };
        runs.push(vec![
            c.seed.into(),
            mode_name(c.mode).into(),
            status.into(),
            stopped.into(),
            c.initial_crash_rate().into(),
            c.final_crash_rate().into(),
        ]);
    }
    (points, runs)
}

fn describe_status(c: &LearningCurve) -> String {
    match c.status {
        TrainingStatus::Completed => "completed".into(),
        TrainingStatus::Diverged { iteration, theta_norm } => format!(
            "diverged at iteration {iteration}: |theta| = {theta_norm} exceeds the bound"
        ),
    }
}

fn run_train(t: &Train, seeds: &Seeds) -> Result<Parts> {
    let policy0 = PolicyParams::new(t.theta0);
    match &t.race {
        None => {
            let curve = train(&t.env, &policy0, &t.settings, seeds.at(&[0]))?;
            let (points, runs) = curve_tables(std::slice::from_ref(&curve));
            let completed = curve.status == TrainingStatus::Completed;
            let notes = vec![
                format!("mode: {}", mode_name(curve.mode)),
                format!("initial crash rate: {}", curve.initial_crash_rate()),
                format!("final crash rate: {}", curve.final_crash_rate()),
                format!("iterations: {}", curve.points.len() - 1),
                format!("status: {}", describe_status(&curve)),
            ];
            Ok((vec![], vec![points, runs], notes, completed))
        }
        Some(race) => {
            let race_seeds: Vec<u64> = (0..race.seeds).map(|i| seeds.at(&[i as u64])).collect();
            let cmp = compare_training(
                &t.env,
                &policy0,
                &t.settings,
                &race_seeds,
                race.target_reduction,
                race.required_wins,
            )?;
            let (points, runs) = curve_tables(&cmp.curves);
            let mut table = Table::new(
                "race",
                &["seed", "full_iterations", "window_iterations", "window_faster"],
            );
            for r in &cmp.runs {
                table.push(vec![
                    r.seed.into(),
                    r.full_iterations.into(),
                    r.window_iterations.into(),
                    r.window_faster.into(),
                ]);
            }
            let comparisons = vec![
                Comparison::new(
                    "seeds where filtered-window training is faster",
                    cmp.wins as f64,
                    race.required_wins as f64,
                    0.0,
                    Rule::AtLeast,
                ),
                Comparison::info("initial crash rate", cmp.initial_crash_rate),
                Comparison::info("target crash rate", cmp.target_crash_rate),
            ];
            let report = VerificationReport::new(
                Property::TrainingEffectiveness,
                None,
                race.seeds,
                t.settings.batch,
                seeds.root,
                0.0,
                comparisons,
            );
            let notes = cmp
                .curves
                .iter()
                .map(|c| {
                    format!(
                        "seed {} {}: crash rate {} -> {}, {}",
                        c.seed,
                        mode_name(c.mode),
                        c.initial_crash_rate(),
                        c.final_crash_rate(),
                        describe_status(c)
                    )
                })
                .collect();
            Ok((vec![report], vec![table, points, runs], notes, true))
        }
    }
}
