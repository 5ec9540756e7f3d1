use gapfv::harness::{run_linear, Estimator, ExperimentConfig};
use gapfv::stats;
use gapfv::synthetic::ProfileKind;

fn config(n: usize, profile: ProfileKind, reps: usize, estimators: &[Estimator]) -> ExperimentConfig {
    let mut c = ExperimentConfig::linear(n, profile);
    c.reps = reps;
    c.estimators = estimators.iter().copied().collect();
    c
}

#[test]
fn efv_bias_shrinks_with_n_in_setting_ii() {
    let mut last = f64::INFINITY;
    for n in [50, 100, 200, 400] {
        let run = run_linear(&config(n, ProfileKind::InverseLinear, 50, &[Estimator::Delta, Estimator::Efv])).unwrap();
        let gaps: Vec<f64> = run
            .rows
            .iter()
            .map(|r| (r.efv_analytic.unwrap() - r.delta.unwrap()).abs())
            .collect();
        let m = stats::mean(&gaps);
        assert!(m < last, "n={n}: mean |E[FV] − Δ| = {m} did not drop below {last}");
        last = m;
    }
}

#[test]
fn jfv_bias_does_not_vanish() {
    let mut gaps = Vec::new();
    for n in [50, 100, 200] {
        let run = run_linear(&config(n, ProfileKind::InverseSqrt, 10, &[Estimator::Delta, Estimator::Efv, Estimator::Jfv])).unwrap();
        for r in &run.rows {
            assert_ne!(r.jfv_analytic, r.efv_analytic);
        }
        gaps.push(stats::mean(
            &run.rows.iter().map(|r| (r.jfv_analytic.unwrap() - r.delta.unwrap()).abs()).collect::<Vec<_>>(),
        ));
    }
    assert!(gaps[2] >= gaps[0], "|J-FV − Δ| shrank: {gaps:?}");
}

#[test]
fn deterministic_gap_matches_tables() {
    for (profile, want) in [(ProfileKind::Intrinsic10, "9.091"), (ProfileKind::InverseLinear, "4.368")] {
        let run = run_linear(&config(100, profile, 2, &[Estimator::Delta])).unwrap();
        assert_eq!(format!("{:.3}", run.summary.delta.unwrap().mean), want);
    }
}

#[test]
fn single_replication_is_repeatable_bit_for_bit() {
    let mut c = config(30, ProfileKind::InverseSqrt, 1, &[Estimator::Delta]);
    c.seed = 99;
    let a = run_linear(&c).unwrap();
    let b = run_linear(&c).unwrap();
    assert_eq!(a.rows.len(), 1);
    assert_eq!(a.rows[0].delta.unwrap().to_bits(), b.rows[0].delta.unwrap().to_bits());
}

#[test]
fn serial_and_parallel_runs_agree() {
    let mut c = ExperimentConfig::linear(20, ProfileKind::Intrinsic10);
    c.reps = 6;
    c.threads = Some(1);
    let serial = run_linear(&c).unwrap();
    c.threads = Some(3);
    let parallel = run_linear(&c).unwrap();
    c.threads = None;
    let pooled = run_linear(&c).unwrap();
    assert_eq!(serial.rows, parallel.rows);
    assert_eq!(serial.rows, pooled.rows);
}

#[test]
fn linear_lfv_tracks_exact_fv_at_n20() {
    let run = run_linear(&config(20, ProfileKind::Intrinsic10, 50, &[Estimator::Fv, Estimator::Lfv])).unwrap();
    let (lfv, fv) = (run.summary.lfv.unwrap(), run.summary.fv_mc.unwrap());
    assert!((lfv.mean - fv.mean).abs() < 3.0 * fv.sd, "LFV {lfv:?} vs FV {fv:?}");
}

#[test]
fn linear_lfv_tracks_exact_fv_at_n100() {
    let run = run_linear(&config(100, ProfileKind::Intrinsic10, 50, &[Estimator::Fv, Estimator::Lfv])).unwrap();
    let (lfv, fv) = (run.summary.lfv.unwrap(), run.summary.fv_mc.unwrap());
    assert!((lfv.mean - fv.mean).abs() < 0.6, "LFV {} vs FV {}", lfv.mean, fv.mean);
}

#[test]
fn halving_the_step_and_doubling_t_barely_moves_lfv() {
    let mut c = config(50, ProfileKind::Intrinsic10, 30, &[Estimator::Lfv]);
    let base = run_linear(&c).unwrap().summary.lfv.unwrap();
    c.step /= 2.0;
    c.t = vec![c.t[0] * 2];
    let fine = run_linear(&c).unwrap().summary.lfv.unwrap();
    assert!((base.mean - fine.mean).abs() < base.sd, "{base:?} vs {fine:?}");
}

#[test]
fn ric_behaves_like_fv_in_setting_i() {
    let run = run_linear(&config(100, ProfileKind::Intrinsic10, 50, &[Estimator::Fv, Estimator::Ric])).unwrap();
    let (ric, fv) = (run.summary.ric.unwrap(), run.summary.fv_mc.unwrap());
    assert!((ric.mean - fv.mean).abs() < 1.0, "RIC {} vs FV {}", ric.mean, fv.mean);
}
