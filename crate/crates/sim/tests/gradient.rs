use rarity_sim::*;

fn settings(mode: GradientMode) -> TrainSettings {
    TrainSettings {
        mode,
        baseline: Baseline::RunningMean,
        iterations: 5,
        batch: 200,
        learning_rate: 10.0,
        eval_episodes: 200,
        max_theta_norm: 1e3,
    }
}

#[test]
fn filtered_is_zero_without_critical_episodes() {
    let cfg = EnvConfig { conflict_prob: 0.0, ..EnvConfig::default() };
    let pol = PolicyParams::new([1.0, 0.5, -2.0]);
    let batch = run_batch(&cfg, &pol, 300, 1).unwrap();
    for mode in [GradientMode::FilteredEpisode, GradientMode::FilteredWindow] {
        let g = reinforce_gradient(&batch, &pol, -0.3, mode).unwrap();
        assert_eq!(g.mean, vec![0.0; POLICY_DIM]);
        assert_eq!(g.n, 300);
    }
}

#[test]
fn without_shaping_or_baseline_normal_episodes_contribute_nothing() {
    let cfg = EnvConfig { conflict_prob: 0.3, effort_cost: 0.0, ..EnvConfig::default() };
    let pol = PolicyParams::new([2.0, 1.0, -2.0]);
    let batch = run_batch(&cfg, &pol, 500, 2).unwrap();
    let full = reinforce_gradient(&batch, &pol, 0.0, GradientMode::Full).unwrap();
    let filt = reinforce_gradient(&batch, &pol, 0.0, GradientMode::FilteredEpisode).unwrap();
    assert_eq!(full.mean, filt.mean);
    assert_eq!(full.sample_variance, filt.sample_variance);

    let report = gradient_variance_comparison(&cfg, &pol, 0.0, 100, 20, 3).unwrap();
    assert_eq!(report.comparison("variance ratio").unwrap().empirical, 1.0);
}

#[test]
fn filtered_equals_full_when_every_episode_is_critical() {
    let cfg = EnvConfig { conflict_prob: 1.0, ..EnvConfig::default() };
    let pol = PolicyParams::new([0.0, 0.0, -4.0]);
    let batch = run_batch(&cfg, &pol, 200, 4).unwrap();
    assert!(batch.iter().all(|t| t.outcome != Outcome::Uneventful));
    let full = reinforce_gradient(&batch, &pol, -0.5, GradientMode::Full).unwrap();
    let filt = reinforce_gradient(&batch, &pol, -0.5, GradientMode::FilteredEpisode).unwrap();
    assert_eq!(full.mean, filt.mean);
}

#[test]
fn window_mode_drops_steps_before_onset() {
    let cfg = EnvConfig { conflict_prob: 1.0, ..EnvConfig::default() };
    let pol = PolicyParams::new([0.0, 0.0, -1.0]);
    let batch = run_batch(&cfg, &pol, 50, 5).unwrap();
    let b = -0.4;
    let g = reinforce_gradient(&batch, &pol, b, GradientMode::FilteredWindow).unwrap();
    let mut expected = [0.0; POLICY_DIM];
    for t in &batch {
        let c = classify_trajectory(t).unwrap();
        let Some((lo, hi)) = c.critical_window else { continue };
        let adv = t.total_return() - b;
        for s in &t.steps[lo..=hi] {
            for k in 0..POLICY_DIM {
                expected[k] += adv * s.log_policy_gradient[k] + s.reward_gradient[k];
            }
        }
    }
    for k in 0..POLICY_DIM {
        assert!((g.mean[k] - expected[k] / 50.0).abs() < 1e-12);
    }
}

#[test]
fn contract_violations_are_errors() {
    let cfg = EnvConfig::default();
    let pol = PolicyParams::new([0.0, 0.0, -1.0]);
    assert!(matches!(
        reinforce_gradient(&[], &pol, 0.0, GradientMode::Full),
        Err(Error::EmptyBatch)
    ));
    let batch = run_batch(&cfg, &pol, 4, 0).unwrap();
    let other = PolicyParams::new([0.0, 0.0, -1.5]);
    assert!(matches!(
        reinforce_gradient(&batch, &other, 0.0, GradientMode::Full),
        Err(Error::OffPolicy { index: 0 })
    ));
    assert!(reinforce_gradient(&batch, &pol, f64::NAN, GradientMode::Full).is_err());
    assert!(finite_difference_gradient(&cfg, &pol, 0.0, 100, 0).is_err());
    assert!(finite_difference_gradient(&cfg, &pol, -0.1, 100, 0).is_err());
}

// With the return identically zero, a baseline of 1 leaves X = -sum of
// scores, whose expectation is zero.
#[test]
fn score_function_has_zero_mean() {
    let cfg = EnvConfig { conflict_prob: 0.0, effort_cost: 0.0, ..EnvConfig::default() };
    let pol = PolicyParams::new([0.5, 0.0, -1.0]);
    let means: Vec<Vec<f64>> = (0..1000)
        .map(|i| {
            let batch = run_batch(&cfg, &pol, 20, 10_000 + i).unwrap();
            reinforce_gradient(&batch, &pol, 1.0, GradientMode::Full).unwrap().mean
        })
        .collect();
    for k in 0..POLICY_DIM {
        let col: Vec<f64> = means.iter().map(|m| m[k]).collect();
        let m = rarity_core::stats::mean(&col);
        let se = (rarity_core::stats::sample_variance(&col) / col.len() as f64).sqrt();
        assert!(se > 0.0);
        assert!(m.abs() < 4.0 * se, "coord {k}: {m} vs se {se}");
    }
}

#[test]
fn finite_differences_vanish_where_return_is_flat() {
    let forced = EnvConfig { conflict_prob: 1.0, ..EnvConfig::default() };
    let saturated = finite_difference(&forced, &PolicyParams::always_brake(), 0.05, 500, 1).unwrap();
    for g in saturated.gradient {
        assert!(g.abs() < 1e-12, "{g}");
    }

    let calm = EnvConfig { conflict_prob: 0.0, ..EnvConfig::default() };
    let fd = finite_difference(&calm, &PolicyParams::new([1.0, 0.0, -1.0]), 0.1, 20_000, 2).unwrap();
    for k in 0..POLICY_DIM {
        assert!(fd.gradient[k].abs() < 4.0 * fd.std_error[k].max(1e-12), "{fd:?}");
    }
}

#[test]
fn zero_learning_rate_keeps_theta() {
    let cfg = EnvConfig { conflict_prob: 0.05, ..EnvConfig::default() };
    let pol = PolicyParams::new([0.0, 0.0, -2.0]);
    let s = TrainSettings { learning_rate: 0.0, ..settings(GradientMode::Full) };
    let curve = train(&cfg, &pol, &s, 9).unwrap();
    assert_eq!(curve.points.len(), s.iterations + 1);
    assert!(curve.points.iter().all(|p| p.theta == pol.theta));
    assert!(curve.points.iter().all(|p| (0.0..=1.0).contains(&p.crash_rate)));
}

#[test]
fn no_conflicts_means_no_crashes() {
    let cfg = EnvConfig { conflict_prob: 0.0, ..EnvConfig::default() };
    for mode in [GradientMode::Full, GradientMode::FilteredEpisode, GradientMode::FilteredWindow] {
        for eval in [0, 100] {
            let s = TrainSettings { eval_episodes: eval, ..settings(mode) };
            let curve = train(&cfg, &PolicyParams::never_brake(), &s, 1).unwrap();
            assert!(curve.points.iter().all(|p| p.crash_rate == 0.0));
        }
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = EnvConfig { conflict_prob: 0.05, ..EnvConfig::default() };
    let pol = PolicyParams::new([0.0, 0.0, -2.0]);
    let s = settings(GradientMode::FilteredWindow);
    let a = train(&cfg, &pol, &s, 17).unwrap();
    let b = train(&cfg, &pol, &s, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.status, TrainingStatus::Completed);
}

#[test]
fn divergence_guard_stops_training() {
    let cfg = EnvConfig { conflict_prob: 0.05, ..EnvConfig::default() };
    let pol = PolicyParams::new([0.0, 0.0, -2.0]);
    let s = TrainSettings { learning_rate: 1e4, max_theta_norm: 2.5, ..settings(GradientMode::Full) };
    let curve = train(&cfg, &pol, &s, 3).unwrap();
    match curve.status {
        TrainingStatus::Diverged { iteration, theta_norm } => {
            assert!(theta_norm > 2.5);
            assert_eq!(curve.points.len(), iteration + 1);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let cfg = EnvConfig::default();
    let pol = PolicyParams::never_brake();
    for s in [
        TrainSettings { iterations: 0, ..settings(GradientMode::Full) },
        TrainSettings { batch: 0, ..settings(GradientMode::Full) },
        TrainSettings { learning_rate: -1.0, ..settings(GradientMode::Full) },
        TrainSettings { max_theta_norm: 0.0, ..settings(GradientMode::Full) },
        TrainSettings { baseline: Baseline::Constant { value: f64::INFINITY }, ..settings(GradientMode::Full) },
    ] {
        assert!(matches!(train(&cfg, &pol, &s, 0), Err(Error::Invalid { .. })));
    }
}
