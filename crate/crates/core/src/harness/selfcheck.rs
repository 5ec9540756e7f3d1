//! Small-scale oracle suite run by `gapfv selfcheck`.
//!
//! Every check reports a margin: observed deviation divided by its tolerance.
//! A check passes when the margin is at most 1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::estimators::{self, efv_with_coefficient};
use crate::langevin::{self, LangevinConfig, PredictionTrace};
use crate::linmodel::{posterior_sample, ridge_fit, svd_decompose, Dataset, RidgeSpec};
use crate::nn::{self, MlpParams, NnDataset};
use crate::oracle;
use crate::rng::{stream, Purpose};
use crate::stats;
use crate::synthetic::{self, ProfileKind, SingularProfile};

use super::config::{Estimator, ExperimentConfig};
use super::linear::run_linear;

/// Standard errors allowed for a single Monte-Carlo comparison.
pub const Z_SINGLE: f64 = 3.0;
/// Standard errors allowed per entry when a whole vector or matrix of
/// Monte-Carlo estimates is compared at once.
pub const Z_FAMILY: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelfcheckOptions {
    pub seed: u64,
    /// Flips the sign of the `tr(H∘H)` coefficient in the analytic E[FV].
    pub inject_efv_bug: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, margin: f64, detail: String) -> Self {
        CheckResult {
            name,
            passed: margin <= 1.0,
            margin,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {:width$}  margin {:.3}  {}\n", c.name, c.margin, c.detail));
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        out.push_str(&format!("{} checks, {} failed\n", self.checks.len(), failed));
        out
    }
}

type Check = fn(&mut ChaCha8Rng, &SelfcheckOptions) -> Result<CheckResult>;

const CHECKS: &[Check] = &[
    svd_reconstruction,
    ridge_dense_solve,
    posterior_scalar_sd,
    posterior_moments,
    efv_dense,
    efv_nested_mc_diagonal,
    efv_nested_mc_random,
    fv_mc_scalar,
    jfv_differs_from_efv,
    tic_ric_dense,
    ric_scalar,
    langevin_scalar_variance,
    lfv_hand_example,
    lfv_matches_fv,
    theta0_exact,
    nn_gradient,
    training_descends,
    tilde_closed_form,
    haar_rotation_invariance,
    beta0_norm,
    nn_target_symmetry,
    sphere_moments,
];

pub fn run_selfcheck(opts: &SelfcheckOptions) -> Result<SelfcheckReport> {
    let mut checks = Vec::with_capacity(CHECKS.len());
    for (i, check) in CHECKS.iter().enumerate() {
        let mut rng = stream(opts.seed, i as u64, Purpose::Check);
        checks.push(check(&mut rng, opts)?);
    }
    Ok(SelfcheckReport { checks })
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vec(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

fn efv(svd: &crate::linmodel::SvdCache, beta0: &DVector<f64>, alpha: f64, s2: f64, opts: &SelfcheckOptions) -> Result<f64> {
    let coef = if opts.inject_efv_bug { -1.5 } else { 1.5 };
    Ok(efv_with_coefficient(svd, Some(beta0), alpha, s2, coef)?.0)
}

fn svd_reconstruction(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let x = gaussian(5, 8, rng);
    let svd = svd_decompose(&x)?;
    let rel = (svd.reconstruct() - &x).norm() / x.norm();
    Ok(CheckResult::new("svd_reconstruction", rel / 1e-10, format!("relative error {rel:.2e}")))
}

fn ridge_dense_solve(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let x = gaussian(10, 20, rng);
    let y = gaussian_vec(10, rng);
    let data = Dataset::new(x.clone(), y.clone(), None, 1.0)?;
    let post = ridge_fit(&data, RidgeSpec::new(0.1, 1.0)?)?;
    let dense = oracle::dense_ridge(&x, &y, 0.1);
    let rel = (&post.beta_hat - &dense).norm() / dense.norm();
    Ok(CheckResult::new("ridge_dense_solve", rel / 1e-8, format!("relative error {rel:.2e}")))
}

fn posterior_scalar_sd(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let data = Dataset::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0), None, 1.0)?;
    let post = ridge_fit(&data, RidgeSpec::new(1.0, 1.0)?)?;
    let draws = 100_000;
    let xs: Vec<f64> = posterior_sample(&post, draws, rng).iter().map(|m| m[0]).collect();
    let sd = stats::sample_sd(&xs);
    let target = 0.5f64.sqrt();
    let se = target / (2.0 * (draws as f64 - 1.0)).sqrt();
    let z = (sd - target).abs() / se;
    Ok(CheckResult::new("posterior_scalar_sd", z / Z_SINGLE, format!("sd {sd:.5} vs {target:.5}")))
}

/// Largest standardized deviation of the sampled prediction mean and
/// covariance from their dense counterparts.
pub fn posterior_moment_zmax(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, sigma0_sq: f64, draws: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let data = Dataset::new(x.clone(), y.clone(), None, sigma0_sq)?;
    let post = ridge_fit(&data, RidgeSpec::new(alpha, sigma0_sq)?)?;
    let mean = x * oracle::dense_ridge(x, y, alpha);
    let cov = oracle::dense_prediction_cov(x, alpha, sigma0_sq);
    let n = x.nrows();
    let samples = posterior_sample(&post, draws, rng);
    let t = draws as f64;
    let mut emp_mean = DVector::zeros(n);
    for s in &samples {
        emp_mean += s;
    }
    emp_mean /= t;
    let mut emp_cov = DMatrix::zeros(n, n);
    for s in &samples {
        let c = s - &mean;
        emp_cov += &c * c.transpose();
    }
    emp_cov /= t;
    let mut zmax: f64 = 0.0;
    for i in 0..n {
        let se = (cov[(i, i)] / t).sqrt();
        zmax = zmax.max((emp_mean[i] - mean[i]).abs() / se);
        for j in 0..=i {
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / t).sqrt();
            zmax = zmax.max((emp_cov[(i, j)] - cov[(i, j)]).abs() / se);
        }
    }
    Ok(zmax)
}

fn posterior_moments(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let x = gaussian(4, 6, rng);
    let y = gaussian_vec(4, rng);
    let z = posterior_moment_zmax(&x, &y, 0.1, 1.0, 100_000, rng)?;
    Ok(CheckResult::new("posterior_moments", z / Z_FAMILY, format!("max |z| {z:.2} over 14 moments")))
}

fn efv_dense(rng: &mut ChaCha8Rng, opts: &SelfcheckOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for (n, p) in [(3, 5), (5, 8), (4, 4)] {
        let x = gaussian(n, p, rng);
        let beta0 = gaussian_vec(p, rng);
        let svd = svd_decompose(&x)?;
        let a = efv(&svd, &beta0, 0.1, 1.0, opts)?;
        let b = oracle::dense_efv(&x, &beta0, 0.1, 1.0);
        let c = estimators::jfv_analytic(&svd, Some(&beta0), 0.1, 1.0)?;
        let d = oracle::dense_jfv(&x, &beta0, 0.1, 1.0);
        worst = worst.max((a - b).abs()).max((c - d).abs());
    }
    Ok(CheckResult::new("efv_jfv_dense", worst / 1e-8, format!("max abs difference {worst:.2e}")))
}

/// Nested Monte Carlo against the closed form, with the divisor-T bias of
/// the inner variance removed from the target.
fn nested_mc_margin(x: &DMatrix<f64>, beta0: &DVector<f64>, alpha: f64, inner: usize, outer: usize, rng: &mut ChaCha8Rng, opts: &SelfcheckOptions) -> Result<(f64, String)> {
    let svd = svd_decompose(x)?;
    let target = efv(&svd, beta0, alpha, 1.0, opts)? * (inner as f64 - 1.0) / inner as f64;
    let mc = oracle::nested_mc_efv(x, beta0, alpha, 1.0, outer, inner, rng);
    let z = (mc.mean - target).abs() / mc.std_error;
    Ok((z / Z_SINGLE, format!("MC {:.4} ± {:.4} vs {target:.4}", mc.mean, mc.std_error)))
}

fn efv_nested_mc_diagonal(rng: &mut ChaCha8Rng, opts: &SelfcheckOptions) -> Result<CheckResult> {
    let x = DMatrix::from_diagonal(&DVector::from_element(2, 2.0));
    let (m, detail) = nested_mc_margin(&x, &DVector::zeros(2), 1.0, 400, 2000, rng, opts)?;
    Ok(CheckResult::new("efv_nested_mc_diagonal", m, detail))
}

fn efv_nested_mc_random(rng: &mut ChaCha8Rng, opts: &SelfcheckOptions) -> Result<CheckResult> {
    let x = gaussian(4, 6, rng);
    let beta0 = gaussian_vec(6, rng) / 6f64.sqrt();
    let (m, detail) = nested_mc_margin(&x, &beta0, 0.1, 400, 2000, rng, opts)?;
    Ok(CheckResult::new("efv_nested_mc_random", m, detail))
}

fn fv_mc_scalar(rng: &mut ChaCha8Rng, opts: &SelfcheckOptions) -> Result<CheckResult> {
    let x = DMatrix::from_element(1, 1, 1.0);
    let beta0 = DVector::from_element(1, 0.0);
    let svd = svd_decompose(&x)?;
    let t = 10_000;
    let target = efv(&svd, &beta0, 1.0, 1.0, opts)? * (t as f64 - 1.0) / t as f64;
    let vals = (0..200)
        .map(|_| {
            let y = DVector::from_element(1, rng.sample::<f64, _>(StandardNormal));
            let data = Dataset::new(x.clone(), y.clone(), Some(beta0.clone()), 1.0)?;
            let post = ridge_fit(&data, RidgeSpec::new(1.0, 1.0)?)?;
            estimators::fv_mc(&posterior_sample(&post, t, rng), &y, 1.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (m, se) = (stats::mean(&vals), stats::std_error(&vals));
    let z = (m - target).abs() / se;
    Ok(CheckResult::new("fv_mc_scalar", z / Z_SINGLE, format!("{m:.4} ± {se:.4} vs {target:.4}")))
}

fn jfv_differs_from_efv(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let (data, svd) = synthetic::make_linear_dataset(SingularProfile::new(ProfileKind::InverseSqrt, 50)?, 1.0, rng)?;
    let beta0 = data.beta0.as_ref();
    let e = estimators::efv_analytic(&svd, beta0, 0.1, 1.0)?.0;
    let j = estimators::jfv_analytic(&svd, beta0, 0.1, 1.0)?;
    let gap = (e - j).abs();
    Ok(CheckResult::new("jfv_differs_from_efv", 1e-6 / gap.max(1e-300), format!("|E[FV] − J-FV| = {gap:.4}")))
}

fn tic_ric_dense(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for (n, p, s2) in [(5, 8, 1.0), (3, 7, 0.5), (4, 4, 2.0)] {
        let x = gaussian(n, p, rng);
        let y = gaussian_vec(n, rng);
        let data = Dataset::new(x.clone(), y.clone(), None, s2)?;
        let post = ridge_fit(&data, RidgeSpec::new(0.1, s2)?)?;
        for kappa in [0.0, 0.1, 3.0] {
            let a = estimators::tic(&data, &post.svd, &post.beta_hat, kappa)?;
            let b = oracle::dense_tic(&x, &y, &post.beta_hat, s2, kappa);
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
        let a = estimators::ric(&data, &post.svd, &post.beta_hat, 0.1)?;
        let b = oracle::dense_ric(&x, &y, &post.beta_hat, s2, 0.1);
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    Ok(CheckResult::new("tic_ric_dense", worst / 1e-8, format!("max relative difference {worst:.2e}")))
}

fn ric_scalar(_: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let data = Dataset::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0), None, 1.0)?;
    let post = ridge_fit(&data, RidgeSpec::new(1.0, 1.0)?)?;
    let r = estimators::ric(&data, &post.svd, &post.beta_hat, 1.0)?;
    let expected = 0.5f64.powi(2) * 0.5;
    let err = (r - expected).abs();
    Ok(CheckResult::new("ric_scalar", err / 1e-12, format!("{r} vs {expected}")))
}

/// Pooled divisor-T variance of `chains` independent scalar ridge chains
/// (`X = [1]`, `y = [1]`, `α = 1`, `σ₀² = 1`, stationary target 0.5).
pub fn scalar_chain_variance(step: f64, steps: usize, chains: usize, seed: u64) -> Result<Vec<f64>> {
    let x = DMatrix::from_element(1, 1, 1.0);
    let y = DVector::from_element(1, 1.0);
    let init = DVector::from_element(1, 0.5);
    (0..chains)
        .map(|c| {
            let cfg = LangevinConfig::new(step, 1.0, steps, 0.0, crate::rng::chain_seed(seed, c as u64))?;
            let trace = langevin::run_chain(langevin::ridge_loss_grad(&x, &y, 1.0), langevin::linear_predict(&x), &init, &y, 1.0, &cfg)?;
            let xs: Vec<f64> = trace.rows().map(|r| r[0]).collect();
            let m = stats::mean(&xs);
            Ok(xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / xs.len() as f64)
        })
        .collect()
}

fn langevin_scalar_variance(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let vars = scalar_chain_variance(1e-3, 1_000_000, 16, rng.random())?;
    let v = stats::mean(&vars);
    let rel = (v - 0.5).abs() / 0.5;
    Ok(CheckResult::new("langevin_scalar_variance", rel / 0.05, format!("pooled variance {v:.4} vs 0.5")))
}

fn lfv_hand_example(_: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let rows = [DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)];
    let trace = PredictionTrace::from_rows(&rows, DVector::from_element(1, 0.0), 1.0)?;
    let v = langevin::lfv(&trace);
    Ok(CheckResult::new("lfv_hand_example", (v - 1.0).abs() / 1e-12, format!("LFV {v} vs 1")))
}

fn lfv_matches_fv(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let mut cfg = ExperimentConfig::linear(20, ProfileKind::Intrinsic10);
    cfg.seed = rng.random();
    cfg.estimators = [Estimator::Fv, Estimator::Lfv].into_iter().collect();
    cfg.threads = Some(1);
    let run = run_linear(&cfg)?;
    let (lfv, fv) = (run.summary.lfv, run.summary.fv_mc);
    let (Some(lfv), Some(fv)) = (lfv, fv) else {
        return Ok(CheckResult::new("lfv_matches_fv", f64::INFINITY, "chain diverged".into()));
    };
    let diff = (lfv.mean - fv.mean).abs();
    Ok(CheckResult::new(
        "lfv_matches_fv",
        diff / (3.0 * fv.sd),
        format!("LFV {:.3} vs FV {:.3} (sd {:.3})", lfv.mean, fv.mean, fv.sd),
    ))
}

fn theta0_exact(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let p = nn::theta0_construct(10, 50)?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z: Vec<f64> = (0..10).map(|_| rng.sample(StandardNormal)).collect();
        worst = worst.max((nn::mlp_forward(&p, &z) - nn::target_mean(&z)).abs());
    }
    Ok(CheckResult::new("theta0_exact", worst / 1e-12, format!("max error {worst:.2e}")))
}

fn nn_gradient(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let (n, d, m) = (20, 3, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let data = NnDataset::new(gaussian(n, d, rng), gaussian_vec(n, rng), None, 1.0)?;
        let flat: Vec<f64> = (0..nn::param_count(d, m)).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
        let params = MlpParams::from_flat(&flat, d, m)?;
        let grad = nn::rho_grad(&params, &data, 0.05)?.flatten();
        let fd = oracle::central_difference(
            |f| nn::rho(&MlpParams::from_flat(f, d, m).expect("shape"), &data, 0.05).expect("shape"),
            &flat,
            1e-5,
        );
        for (a, b) in grad.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-3));
        }
    }
    Ok(CheckResult::new("nn_gradient", worst / 1e-5, format!("max relative error {worst:.2e}")))
}

fn training_descends(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let reps = 20;
    let mut descended = 0;
    for _ in 0..reps {
        let data = synthetic::make_nn_dataset(500, 5, 1.0, rng)?;
        let init = nn::perturbed_init(5, 50, 0.1, rng)?;
        let out = nn::train_gd(&data, &init, 0.1, 1e-3, 100)?;
        let mse = |p: &MlpParams| -> Result<f64> {
            let g = nn::predictions(p, &data)?;
            Ok((&data.y - g).norm_squared() / data.n() as f64)
        };
        if mse(&out.params)? < mse(&init)? {
            descended += 1;
        }
    }
    let frac = descended as f64 / reps as f64;
    let margin = 0.95 / frac.max(1e-12);
    Ok(CheckResult::new("training_descends", margin, format!("{descended}/{reps} replications reduced the MSE")))
}

fn tilde_closed_form(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let n = 30;
    let c = 0.7;
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mu = vec![c; n];
    let g = DVector::zeros(n);
    let s2 = 1.3;
    let got = nn::tilde_gap_from_predictions(&g, &y, &mu, s2).mean;
    let want = s2 + c * c - y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let err = (got - want).abs();
    Ok(CheckResult::new("tilde_closed_form", err / 1e-12, format!("difference {err:.2e}")))
}

fn haar_rotation_invariance(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let n = 4;
    let r = synthetic::haar_orthonormal(n, n, rng)?;
    let draws = 10_000;
    let mut cols = vec![Vec::with_capacity(draws); n];
    for _ in 0..draws {
        let u = synthetic::haar_orthonormal(n, n, rng)?;
        let ru = &r * u;
        for (i, c) in cols.iter_mut().enumerate() {
            c.push(ru[(i, 0)]);
        }
    }
    let zmax = cols
        .iter()
        .map(|c| stats::mean(c).abs() / stats::std_error(c))
        .fold(0.0, f64::max);
    Ok(CheckResult::new("haar_rotation_invariance", zmax / Z_FAMILY, format!("max |z| {zmax:.2}")))
}

fn beta0_norm(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let profile = SingularProfile::new(ProfileKind::InverseLinear, 20)?;
    let norms = (0..200)
        .map(|_| Ok(synthetic::make_linear_design(profile, rng)?.beta0.norm_squared()))
        .collect::<Result<Vec<f64>>>()?;
    let z = (stats::mean(&norms) - 1.0).abs() / stats::std_error(&norms);
    Ok(CheckResult::new("beta0_norm", z / Z_SINGLE, format!("mean ‖β₀‖² {:.4}", stats::mean(&norms))))
}

fn nn_target_symmetry(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let data = synthetic::make_nn_dataset(10_000, 5, 0.0, rng)?;
    let mu: Vec<f64> = data.mu_truth.as_ref().expect("synthetic data carries μ").iter().copied().collect();
    let z = stats::mean(&mu).abs() / stats::std_error(&mu);
    Ok(CheckResult::new("nn_target_symmetry", z / Z_SINGLE, format!("mean μ {:.4}", stats::mean(&mu))))
}

fn sphere_moments(rng: &mut ChaCha8Rng, _: &SelfcheckOptions) -> Result<CheckResult> {
    let mut zmax: f64 = 0.0;
    for a in [vec![1.0, 0.0], vec![1.0, -1.0, 0.0]] {
        let s = synthetic::sphere_moment_selftest(&a, 100_000, rng)?;
        zmax = zmax.max((s.empirical - s.analytic).abs() / s.std_error);
    }
    Ok(CheckResult::new("sphere_moments", zmax / Z_SINGLE, format!("max |z| {zmax:.2}")))
}
