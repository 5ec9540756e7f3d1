//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use gapfv::estimators::{efv_analytic, gap_delta, jfv_analytic};
use gapfv::harness::selfcheck::scalar_chain_variance;
use gapfv::harness::{run_linear, run_nn, Estimator, ExperimentConfig, LinearRun};
use gapfv::linmodel::{svd_decompose, SvdCache};
use gapfv::nn::{self, MlpParams, NnDataset};
use gapfv::oracle;
use gapfv::rng::{stream, Purpose};
use gapfv::stats;
use gapfv::synthetic::{sphere_moment_selftest, ProfileKind, SingularProfile};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEED: u64 = 7;

/// Independent stream for one Monte-Carlo item.
fn item(key: u64) -> ChaCha8Rng {
    stream(SEED, key, Purpose::Check)
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn linear(profile: ProfileKind, n: usize, estimators: &[Estimator]) -> LinearRun {
    let mut c = ExperimentConfig::linear(n, profile);
    c.seed = SEED;
    c.estimators = estimators.iter().copied().collect();
    run_linear(&c).expect("linear run")
}

/// Spectral factors with the profile's singular values; Δ depends on nothing else.
fn profile_svd(profile: ProfileKind, n: usize) -> SvdCache {
    let s = SingularProfile::new(profile, n).unwrap().singular_values();
    let v = DMatrix::identity(2 * n, n);
    SvdCache::from_factors(DMatrix::identity(n, n), s, v).unwrap()
}

fn criterion_1() -> Outcome {
    let cases = [
        (ProfileKind::Intrinsic10, vec![(100, "9.091")]),
        (
            ProfileKind::InverseLinear,
            vec![(100, "4.368"), (200, "4.417"), (300, "4.434"), (400, "4.442")],
        ),
        (
            ProfileKind::InverseSqrt,
            vec![(100, "23.53"), (200, "29.98"), (300, "33.86"), (400, "36.66")],
        ),
    ];
    let mut ok = true;
    let mut got = Vec::new();
    for (profile, rows) in cases {
        for (n, want) in rows {
            let delta = gap_delta(&profile_svd(profile, n), 0.1);
            let decimals = want.split('.').nth(1).unwrap().len();
            let shown = format!("{delta:.decimals$}");
            ok &= shown == want;
            got.push(format!("{}@{n}={delta:.4}", profile.name()));
        }
    }
    outcome(ok, got.join(" "))
}

struct LinearResults {
    runs: Vec<(ProfileKind, LinearRun)>,
}

fn linear_results() -> LinearResults {
    let est = [Estimator::Efv, Estimator::Fv, Estimator::Lfv];
    let runs = [ProfileKind::Intrinsic10, ProfileKind::InverseLinear, ProfileKind::InverseSqrt]
        .into_iter()
        .map(|p| (p, linear(p, 100, &est)))
        .collect();
    LinearResults { runs }
}

fn criterion_2(lr: &LinearResults) -> Outcome {
    let efv_i = lr.runs[0].1.summary.efv_analytic.unwrap().mean;
    let efv_iii = lr.runs[2].1.summary.efv_analytic.unwrap().mean;
    outcome(
        (efv_i - 8.533).abs() <= 0.5 && (efv_iii - 17.34).abs() <= 1.0,
        format!("(i) {efv_i:.3} vs 8.533 ± 0.5; (iii) {efv_iii:.3} vs 17.34 ± 1.0"),
    )
}

fn criterion_3(lr: &LinearResults) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, run) in &lr.runs {
        let fv = run.summary.fv_mc.unwrap().mean;
        let efv = run.summary.efv_analytic.unwrap().mean;
        ok &= (fv - efv).abs() <= 0.5;
        parts.push(format!("{}: FV {fv:.3} E[FV] {efv:.3}", p.name()));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_4(lr: &LinearResults) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for ((p, run), tol) in lr.runs.iter().zip([0.7, 0.7, 3.5]) {
        let fv = run.summary.fv_mc.unwrap().mean;
        let Some(lfv) = run.summary.lfv.map(|s| s.mean) else {
            return outcome(false, format!("{}: {} chains diverged", p.name(), run.failed));
        };
        ok &= (lfv - fv).abs() <= tol;
        parts.push(format!("{}: LFV {lfv:.3} FV {fv:.3} (tol {tol})", p.name()));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let t1 = linear(ProfileKind::Intrinsic10, 100, &[Estimator::Tic0]).summary.tic0.unwrap();
    let t2 = linear(ProfileKind::InverseLinear, 200, &[Estimator::Tic0]).summary.tic0.unwrap();
    outcome(
        (7.3..=10.2).contains(&t1.mean) && (170.0..=210.0).contains(&t2.mean),
        format!(
            "(i) n=100: {:.3} ± {:.3} in [7.3, 10.2]; (ii) n=200: {:.2} ± {:.2} in [170, 210]",
            t1.mean, t1.sd, t2.mean, t2.sd
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut worst_z: f64 = 0.0;
    let inner = 400;
    for (k, (n, p)) in [(1, 2), (2, 3), (3, 5), (4, 6), (5, 8)].into_iter().enumerate() {
        let mut rng = item(600 + k as u64);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let beta0 = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal)) / (p as f64).sqrt();
        let svd = svd_decompose(&x).unwrap();
        let closed = efv_analytic(&svd, Some(&beta0), 0.1, 1.0).unwrap().0;
        let target = closed * (inner as f64 - 1.0) / inner as f64;
        let mc = oracle::nested_mc_efv(&x, &beta0, 0.1, 1.0, 2000, inner, &mut rng);
        worst_z = worst_z.max((mc.mean - target).abs() / mc.std_error);
    }
    let mut worst_dense: f64 = 0.0;
    for k in 0..200 {
        let mut rng = item(700 + k);
        let n = rng.random_range(1..=5);
        let p = rng.random_range(n..=8);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let beta0 = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
        let alpha = rng.random_range(0.01..2.0);
        let svd = svd_decompose(&x).unwrap();
        let e = efv_analytic(&svd, Some(&beta0), alpha, 1.0).unwrap().0;
        let j = jfv_analytic(&svd, Some(&beta0), alpha, 1.0).unwrap();
        worst_dense = worst_dense
            .max((e - oracle::dense_efv(&x, &beta0, alpha, 1.0)).abs())
            .max((j - oracle::dense_jfv(&x, &beta0, alpha, 1.0)).abs());
    }
    outcome(
        worst_z < 3.0 && worst_dense < 1e-8,
        format!("nested MC max |z| {worst_z:.2} (< 3); dense max |diff| {worst_dense:.2e} (< 1e-8)"),
    )
}

fn criterion_7() -> Outcome {
    let vars = scalar_chain_variance(1e-3, 1_000_000, 16, SEED).unwrap();
    let pooled = stats::mean(&vars);
    let rel = (pooled - 0.5).abs() / 0.5;
    outcome(
        rel <= 0.05,
        format!(
            "pooled over 16 chains (δ=1e-3, T=1e6 each): {pooled:.4} vs 0.5, {:.2}% off; first chain alone {:.4}",
            100.0 * rel,
            vars[0]
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut worst_grad: f64 = 0.0;
    for k in 0..20 {
        let mut rng = item(800 + k);
        let (n, d, m) = (20, 3, 4);
        let z = DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let data = NnDataset::new(z, y, None, 1.0).unwrap();
        let flat: Vec<f64> = (0..nn::param_count(d, m)).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
        let params = MlpParams::from_flat(&flat, d, m).unwrap();
        let grad = nn::rho_grad(&params, &data, 1e-3).unwrap().flatten();
        let fd = oracle::central_difference(
            |f| nn::rho(&MlpParams::from_flat(f, d, m).unwrap(), &data, 1e-3).unwrap(),
            &flat,
            1e-5,
        );
        for (a, b) in grad.iter().zip(&fd) {
            worst_grad = worst_grad.max((a - b).abs() / a.abs().max(b.abs()).max(1e-3));
        }
    }
    let theta0 = nn::theta0_construct(5, 50).unwrap();
    let mut worst_theta: f64 = 0.0;
    let mut rng = item(820);
    for _ in 0..100 {
        let z: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        worst_theta = worst_theta.max((nn::mlp_forward(&theta0, &z) - nn::target_mean(&z)).abs());
    }

    let mut c = ExperimentConfig::nn(1000);
    c.seed = SEED;
    c.t = vec![250, 1000];
    let run = run_nn(&c).expect("nn run");
    let short = run.cells[0].lfv.unwrap();
    let long = run.cells[1].lfv.unwrap();
    let tilde = run.cells[1].tilde_sum.unwrap();
    let ratio = long.mean / tilde;
    let paired_below = run.cells[1].failed == 0 && short.mean < long.mean;
    outcome(
        worst_grad < 1e-5 && worst_theta < 1e-12 && paired_below && (1.0 / 3.0..=3.0).contains(&ratio),
        format!(
            "grad rel err {worst_grad:.1e}; θ₀ err {worst_theta:.1e}; LFV(T=250) {:.3} < LFV(T=1000) {:.3} ± {:.3}; \
             Δ̃ sum {tilde:.3} (mean scale {:.4}), ratio {ratio:.3} in [1/3, 3]",
            short.mean,
            long.mean,
            long.sd,
            run.cells[1].tilde_mean.unwrap()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let mut rng = item(900 + k);
        let n = rng.random_range(2..=10);
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let s = sphere_moment_selftest(&a, 100_000, &mut rng).unwrap();
        worst = worst.max((s.empirical - s.analytic).abs() / s.std_error);
    }
    outcome(worst < 3.0, format!("max |z| over 20 matrices {worst:.2} (< 3)"))
}

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_time = took <= budget;
    let passed = o.passed && in_time;
    let tag = if passed { "PASS" } else { "FAIL" };
    let time_note = if in_time { String::new() } else { format!(" (over budget {budget:?})") };
    println!("{tag} criterion {id} ({name}): {} [{:.1} s{time_note}]", o.detail, took.as_secs_f64());
    passed
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report(1, "deterministic gap", Duration::from_secs(1), criterion_1);

    let start = Instant::now();
    let lr = linear_results();
    let shared = start.elapsed();
    println!("     linear runs for criteria 2-4 took {:.1} s", shared.as_secs_f64());
    all &= report(2, "E[FV] replication means", Duration::from_secs(60).saturating_sub(shared), || criterion_2(&lr));
    all &= report(3, "FV vs E[FV]", Duration::from_secs(300).saturating_sub(shared), || criterion_3(&lr));
    all &= report(4, "LFV vs FV", Duration::from_secs(600).saturating_sub(shared), || criterion_4(&lr));
    all &= report(5, "TIC behavior", Duration::from_secs(600), criterion_5);
    all &= report(6, "brute-force oracle equivalence", Duration::from_secs(120), criterion_6);
    all &= report(7, "Langevin stationarity", Duration::from_secs(30), criterion_7);
    all &= report(8, "network properties", Duration::from_secs(1200), criterion_8);
    all &= report(9, "sphere moment", Duration::from_secs(30), criterion_9);
    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
