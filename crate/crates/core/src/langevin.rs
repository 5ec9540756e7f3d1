//! Discretized Langevin dynamics and the Langevin functional variance.
//!
//! Update rule: `γ ← γ − ¼ δ κ_n ∇loss(γ) + √δ e` with `e ~ N(0, I)`. For the
//! ridge loss this is an Euler step of an Ornstein–Uhlenbeck process whose
//! stationary law is the quasi-posterior.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::functional_variance;

/// Source of the Gaussian perturbation.
pub trait NoiseSource {
    fn fill(&mut self, out: &mut [f64]);
}

/// Standard-normal noise drawn from a random stream.
pub struct GaussianNoise<R>(pub R);

impl<R: Rng> NoiseSource for GaussianNoise<R> {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.0.sample(StandardNormal);
        }
    }
}

/// Zero perturbation: turns the chain into plain gradient descent. Test hook.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig {
    pub step: f64,
    pub kappa_n: f64,
    pub steps_total: usize,
    pub burn_in_fraction: f64,
    pub seed: u64,
}

impl LangevinConfig {
    pub fn new(step: f64, kappa_n: f64, steps_total: usize, burn_in_fraction: f64, seed: u64) -> Result<Self> {
        let cfg = LangevinConfig {
            step,
            kappa_n,
            steps_total,
            burn_in_fraction,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Linear-model defaults: `δ = 1/(10n)`, `T = 15n`, no burn-in.
    pub fn linear_default(n: usize, sigma0_sq: f64, seed: u64) -> Result<Self> {
        Self::new(1.0 / (10.0 * n as f64), n as f64 / sigma0_sq, 15 * n, 0.0, seed)
    }

    /// Network defaults: `δ = 1e-5`, `T = 1000`, first 10% discarded.
    pub fn nn_default(n: usize, sigma_sq: f64, seed: u64) -> Result<Self> {
        Self::new(1e-5, n as f64 / sigma_sq, 1000, 0.1, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config { field: "step", reason: "must be positive".into() });
        }
        if !(self.kappa_n > 0.0 && self.kappa_n.is_finite()) {
            return Err(Error::Config { field: "kappa_n", reason: "must be positive".into() });
        }
        if self.steps_total < 2 {
            return Err(Error::Config { field: "steps_total", reason: "need at least 2 steps".into() });
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::Config { field: "burn_in_fraction", reason: "must lie in [0, 1)".into() });
        }
        if self.retained() < 2 {
            return Err(Error::Config {
                field: "burn_in_fraction",
                reason: format!("leaves {} retained steps, need at least 2", self.retained()),
            });
        }
        Ok(())
    }

    /// Number of leading states dropped from the trace.
    pub fn burned(&self) -> usize {
        (self.burn_in_fraction * self.steps_total as f64).floor() as usize
    }

    pub fn retained(&self) -> usize {
        self.steps_total.saturating_sub(self.burned())
    }
}

/// Per-step model outputs `μ_i^(t)` of the retained states, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    mu: Vec<f64>,
    n: usize,
    pub y: DVector<f64>,
    pub sigma0_sq: f64,
}

impl PredictionTrace {
    pub fn from_rows(rows: &[DVector<f64>], y: DVector<f64>, sigma0_sq: f64) -> Result<Self> {
        let n = y.len();
        let mut mu = Vec::with_capacity(rows.len() * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::InvalidInput("trace row length differs from y".into()));
            }
            mu.extend_from_slice(r.as_slice());
        }
        let trace = PredictionTrace { mu, n, y, sigma0_sq };
        trace.validate()?;
        Ok(trace)
    }

    fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::InsufficientSamples { got: self.len() });
        }
        if self.mu.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite trace entry".into()));
        }
        if !(self.sigma0_sq > 0.0) {
            return Err(Error::InvalidInput("sigma0_sq must be positive".into()));
        }
        Ok(())
    }

    /// Number of retained steps.
    pub fn len(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.mu.len() / self.n
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.mu[t * self.n..(t + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.mu.chunks_exact(self.n)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.n, &self.mu)
    }
}

/// One Langevin update. `step_index` is only used for error reporting.
pub fn langevin_step(
    gamma: &DVector<f64>,
    grad: &DVector<f64>,
    config: &LangevinConfig,
    noise: &mut dyn NoiseSource,
    step_index: usize,
) -> Result<DVector<f64>> {
    if gamma.len() != grad.len() {
        return Err(Error::InvalidInput("parameter and gradient lengths differ".into()));
    }
    let mut next = gamma.clone();
    let mut buf = vec![0.0; gamma.len()];
    step_in_place(next.as_mut_slice(), grad.as_slice(), config, noise, &mut buf, step_index)?;
    Ok(next)
}

fn step_in_place(
    gamma: &mut [f64],
    grad: &[f64],
    config: &LangevinConfig,
    noise: &mut dyn NoiseSource,
    buf: &mut [f64],
    step_index: usize,
) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: step_index });
    }
    let drift = 0.25 * config.step * config.kappa_n;
    let scale = config.step.sqrt();
    noise.fill(buf);
    for ((g, d), e) in gamma.iter_mut().zip(grad).zip(buf.iter()) {
        *g += -drift * d + scale * e;
    }
    if gamma.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: step_index });
    }
    Ok(())
}

/// Runs the chain from `init` with noise seeded by `config.seed`.
///
/// States `γ⁽¹⁾ = init, …, γ⁽ᵀ⁾` are visited; the first `config.burned()` are
/// dropped and only `predict(γ⁽ᵗ⁾)` is stored for the rest.
pub fn run_chain<G, P>(
    loss_grad: G,
    predict: P,
    init: &DVector<f64>,
    y: &DVector<f64>,
    sigma0_sq: f64,
    config: &LangevinConfig,
) -> Result<PredictionTrace>
where
    G: FnMut(&DVector<f64>) -> DVector<f64>,
    P: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut noise = GaussianNoise(ChaCha8Rng::seed_from_u64(config.seed));
    run_chain_with_noise(loss_grad, predict, init, y, sigma0_sq, config, &mut noise)
}

/// [`run_chain`] with an injected noise source.
pub fn run_chain_with_noise<G, P>(
    mut loss_grad: G,
    mut predict: P,
    init: &DVector<f64>,
    y: &DVector<f64>,
    sigma0_sq: f64,
    config: &LangevinConfig,
    noise: &mut dyn NoiseSource,
) -> Result<PredictionTrace>
where
    G: FnMut(&DVector<f64>) -> DVector<f64>,
    P: FnMut(&DVector<f64>) -> DVector<f64>,
{
    config.validate()?;
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite chain initialization".into()));
    }
    let n = y.len();
    let burned = config.burned();
    let mut mu = Vec::with_capacity(config.retained() * n);
    let mut gamma = init.clone();
    let mut buf = vec![0.0; init.len()];

    for t in 0..config.steps_total {
        if t >= burned {
            let pred = predict(&gamma);
            if pred.len() != n {
                return Err(Error::InvalidInput("prediction length differs from y".into()));
            }
            if pred.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: t });
            }
            mu.extend_from_slice(pred.as_slice());
        }
        if t + 1 < config.steps_total {
            let grad = loss_grad(&gamma);
            if grad.len() != gamma.len() {
                return Err(Error::InvalidInput("gradient length differs from parameters".into()));
            }
            step_in_place(gamma.as_mut_slice(), grad.as_slice(), config, noise, &mut buf, t + 1)?;
        }
    }
    let trace = PredictionTrace {
        mu,
        n,
        y: y.clone(),
        sigma0_sq,
    };
    trace.validate()?;
    Ok(trace)
}

/// Langevin functional variance of a trace.
pub fn lfv(trace: &PredictionTrace) -> f64 {
    functional_variance(trace.rows(), trace.y.as_slice(), trace.sigma0_sq)
        .expect("trace holds at least two rows of matching length")
}

/// LFV over a sub-range of trace rows.
pub fn lfv_range(trace: &PredictionTrace, rows: Range<usize>) -> Result<f64> {
    if rows.end > trace.len() || rows.start > rows.end {
        return Err(Error::InvalidInput(format!(
            "row range {rows:?} outside trace of length {}",
            trace.len()
        )));
    }
    functional_variance(
        rows.map(|t| trace.row(t)),
        trace.y.as_slice(),
        trace.sigma0_sq,
    )
}

/// Gradient of `n⁻¹‖y − Xβ‖² + α‖β‖²`.
pub fn ridge_loss_grad<'a>(
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    alpha: f64,
) -> impl FnMut(&DVector<f64>) -> DVector<f64> + 'a {
    let n = x.nrows() as f64;
    move |beta| {
        let resid = x * beta - y;
        let mut g = x.tr_mul(&resid) * (2.0 / n);
        g.axpy(2.0 * alpha, beta, 1.0);
        g
    }
}

/// `β ↦ Xβ`.
pub fn linear_predict(x: &DMatrix<f64>) -> impl FnMut(&DVector<f64>) -> DVector<f64> + '_ {
    move |beta| x * beta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(t: usize, burn: f64) -> LangevinConfig {
        LangevinConfig::new(1e-3, 1.0, t, burn, 9).unwrap()
    }

    #[test]
    fn zero_gradient_zero_noise_is_identity() {
        let g = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let out = langevin_step(&g, &DVector::zeros(3), &cfg(10, 0.0), &mut ZeroNoise, 1).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn step_applies_quarter_drift() {
        let c = LangevinConfig::new(0.01, 50.0, 10, 0.0, 0).unwrap();
        let g = DVector::from_vec(vec![1.0]);
        let out = langevin_step(&g, &DVector::from_vec(vec![2.0]), &c, &mut ZeroNoise, 1).unwrap();
        assert!((out[0] - (1.0 - 0.25 * 0.01 * 50.0 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let g = DVector::from_vec(vec![0.0]);
        let bad = DVector::from_vec(vec![f64::INFINITY]);
        let err = langevin_step(&g, &bad, &cfg(10, 0.0), &mut ZeroNoise, 17).unwrap_err();
        assert_eq!(err, Error::Divergence { step: 17 });
    }

    #[test]
    fn chain_divergence_aborts() {
        let y = DVector::from_element(1, 0.0);
        let c = LangevinConfig::new(1.0, 100.0, 500, 0.0, 1).unwrap();
        // gradient 2γ with drift ¼·1·100·2 = 50: explodes geometrically
        let err = run_chain(|g| g * 2.0, |g| g.clone(), &DVector::from_element(1, 1.0), &y, 1.0, &c)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(LangevinConfig::new(0.0, 1.0, 10, 0.0, 0).is_err());
        assert!(LangevinConfig::new(1e-3, 1.0, 1, 0.0, 0).is_err());
        assert!(LangevinConfig::new(1e-3, 1.0, 10, 1.0, 0).is_err());
        assert!(LangevinConfig::new(1e-3, 1.0, 10, 0.95, 0).is_err());
        assert!(LangevinConfig::new(1e-3, 1.0, 10, 0.8, 0).is_ok());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let y = DVector::from_vec(vec![0.5, -0.5]);
        let c = LangevinConfig::new(1e-2, 2.0, 200, 0.0, 42).unwrap();
        let run = || {
            run_chain(|g| g * 1.0, |g| g.clone(), &DVector::from_vec(vec![0.1, 0.2]), &y, 1.0, &c).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn no_drift_no_noise_rows_identical() {
        let y = DVector::from_vec(vec![0.0, 1.0]);
        let init = DVector::from_vec(vec![0.3, 0.7]);
        let trace = run_chain_with_noise(
            |g| DVector::zeros(g.len()),
            |g| g.clone(),
            &init,
            &y,
            1.0,
            &cfg(20, 0.0),
            &mut ZeroNoise,
        )
        .unwrap();
        assert_eq!(trace.len(), 20);
        assert!(trace.rows().all(|r| r == init.as_slice()));
        assert_eq!(lfv(&trace), 0.0);
    }

    #[test]
    fn burn_in_drops_leading_rows() {
        let y = DVector::from_element(1, 0.0);
        let c = LangevinConfig::new(1e-2, 1.0, 1000, 0.1, 3).unwrap();
        let full_cfg = LangevinConfig { burn_in_fraction: 0.0, ..c };
        let burned = run_chain(|g| g.clone(), |g| g.clone(), &DVector::from_element(1, 1.0), &y, 1.0, &c).unwrap();
        let full = run_chain(|g| g.clone(), |g| g.clone(), &DVector::from_element(1, 1.0), &y, 1.0, &full_cfg).unwrap();
        assert_eq!(burned.len(), 900);
        assert_eq!(burned.row(0), full.row(100));
        assert_eq!(lfv(&burned), lfv_range(&full, 100..1000).unwrap());
    }

    #[test]
    fn lfv_hand_examples() {
        let y = DVector::from_element(1, 0.0);
        let sym = PredictionTrace::from_rows(
            &[DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
            y.clone(),
            1.0,
        )
        .unwrap();
        assert_eq!(lfv(&sym), 0.0);
        let two = PredictionTrace::from_rows(
            &[DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)],
            y,
            1.0,
        )
        .unwrap();
        assert!((lfv(&two) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trace_needs_two_rows() {
        let err = PredictionTrace::from_rows(&[DVector::zeros(1)], DVector::zeros(1), 1.0).unwrap_err();
        assert_eq!(err, Error::InsufficientSamples { got: 1 });
    }
}
