//! One-hidden-layer tanh network `g_θ(z) = ⟨θ⁽²⁾, tanh(θ⁽¹⁾z + θ⁽⁰⁾)⟩`.
//!
//! Parameters flatten to `(θ⁽⁰⁾, θ⁽¹⁾ row-major, θ⁽²⁾)`, length `M(d+2)`. The
//! hot loops (training, Langevin) work on the flat vector directly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Hidden biases, length M.
    pub theta0: DVector<f64>,
    /// Input weights, M×d.
    pub theta1: DMatrix<f64>,
    /// Output weights, length M.
    pub theta2: DVector<f64>,
}

impl MlpParams {
    pub fn zeros(d: usize, m: usize) -> Self {
        MlpParams {
            theta0: DVector::zeros(m),
            theta1: DMatrix::zeros(m, d),
            theta2: DVector::zeros(m),
        }
    }

    pub fn hidden(&self) -> usize {
        self.theta0.len()
    }

    pub fn input_dim(&self) -> usize {
        self.theta1.ncols()
    }

    pub fn param_count(&self) -> usize {
        param_count(self.input_dim(), self.hidden())
    }

    pub fn flatten(&self) -> DVector<f64> {
        let (m, d) = (self.hidden(), self.input_dim());
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(self.theta0.as_slice());
        for r in 0..m {
            for c in 0..d {
                flat.push(self.theta1[(r, c)]);
            }
        }
        flat.extend_from_slice(self.theta2.as_slice());
        DVector::from_vec(flat)
    }

    pub fn from_flat(flat: &[f64], d: usize, m: usize) -> Result<Self> {
        if flat.len() != param_count(d, m) {
            return Err(Error::InvalidInput(format!(
                "flat parameter length {} != M(d+2) = {}",
                flat.len(),
                param_count(d, m)
            )));
        }
        Ok(MlpParams {
            theta0: DVector::from_column_slice(&flat[..m]),
            theta1: DMatrix::from_row_slice(m, d, &flat[m..m + m * d]),
            theta2: DVector::from_column_slice(&flat[m + m * d..]),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.theta0.iter().chain(self.theta1.iter()).chain(self.theta2.iter()).all(|v| v.is_finite())
    }
}

pub fn param_count(d: usize, m: usize) -> usize {
    m * (d + 2)
}

/// Network output for one input.
pub fn mlp_forward(params: &MlpParams, z: &[f64]) -> f64 {
    let mut out = 0.0;
    for k in 0..params.hidden() {
        let a = params.theta0[k] + (0..z.len()).map(|j| params.theta1[(k, j)] * z[j]).sum::<f64>();
        out += params.theta2[k] * a.tanh();
    }
    out
}

/// The target `μ(z) = 3 tanh(⟨z, 1⟩/2)`.
pub fn target_mean(z: &[f64]) -> f64 {
    3.0 * (z.iter().sum::<f64>() / 2.0).tanh()
}

/// Parameters reproducing the target exactly: unit 0 carries
/// `θ⁽¹⁾ = ½·1`, `θ⁽⁰⁾ = 0`, `θ⁽²⁾ = 3`; all other units are zero.
pub fn theta0_construct(d: usize, m: usize) -> Result<MlpParams> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidInput("need M >= 1 and d >= 1".into()));
    }
    let mut p = MlpParams::zeros(d, m);
    p.theta1.row_mut(0).fill(0.5);
    p.theta2[0] = 3.0;
    Ok(p)
}

/// `θ₀` plus elementwise `N(0, sd²)` noise.
pub fn perturbed_init<R: Rng + ?Sized>(d: usize, m: usize, sd: f64, rng: &mut R) -> Result<MlpParams> {
    let base = theta0_construct(d, m)?.flatten();
    let flat: Vec<f64> = base
        .iter()
        .map(|&b| b + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    MlpParams::from_flat(&flat, d, m)
}

#[derive(Debug, Clone)]
pub struct NnDataset {
    /// Inputs, n×d.
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub mu_truth: Option<DVector<f64>>,
    pub sigma_sq: f64,
    z_rows: Vec<f64>,
}

impl NnDataset {
    pub fn new(z: DMatrix<f64>, y: DVector<f64>, mu_truth: Option<DVector<f64>>, sigma_sq: f64) -> Result<Self> {
        let n = z.nrows();
        if n == 0 || z.ncols() == 0 {
            return Err(Error::InvalidInput("inputs must be non-empty".into()));
        }
        if y.len() != n || mu_truth.as_ref().is_some_and(|m| m.len() != n) {
            return Err(Error::InvalidInput("outcome length does not match inputs".into()));
        }
        let finite = z.iter().chain(y.iter()).chain(mu_truth.iter().flat_map(|m| m.iter())).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite network data".into()));
        }
        if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
            return Err(Error::InvalidInput("sigma_sq must be nonnegative".into()));
        }
        let z_rows = z.transpose().as_slice().to_vec();
        Ok(NnDataset {
            z,
            y,
            mu_truth,
            sigma_sq,
            z_rows,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    pub(crate) fn input(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.z_rows[i * d..(i + 1) * d]
    }
}

/// Shape of the network, for kernels operating on flat parameter vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub d: usize,
    pub m: usize,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        param_count(self.d, self.m)
    }

    fn split<'a>(&self, flat: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (t0, rest) = flat.split_at(self.m);
        let (t1, t2) = rest.split_at(self.m * self.d);
        (t0, t1, t2)
    }

    fn hidden_into(&self, flat: &[f64], z: &[f64], h: &mut [f64]) {
        let (t0, t1, _) = self.split(flat);
        for k in 0..self.m {
            let w = &t1[k * self.d..(k + 1) * self.d];
            let a = t0[k] + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            h[k] = a.tanh();
        }
    }

    /// `g_θ(z_i)` for every input.
    pub fn predict(&self, flat: &[f64], data: &NnDataset) -> DVector<f64> {
        let (_, _, t2) = self.split(flat);
        let mut h = vec![0.0; self.m];
        DVector::from_fn(data.n(), |i, _| {
            self.hidden_into(flat, data.input(i), &mut h);
            h.iter().zip(t2).map(|(a, b)| a * b).sum()
        })
    }

    /// Writes `∇ρ_α(θ)` into `grad` and returns `ρ_α(θ)`.
    pub fn rho_and_grad(&self, flat: &[f64], data: &NnDataset, alpha: f64, grad: &mut [f64]) -> f64 {
        self.rho_grad_predict(flat, data, alpha, grad, None)
    }

    /// [`MlpShape::rho_and_grad`] that also stores `g_θ(z_i)` in `preds`.
    pub fn rho_grad_predict(
        &self,
        flat: &[f64],
        data: &NnDataset,
        alpha: f64,
        grad: &mut [f64],
        mut preds: Option<&mut [f64]>,
    ) -> f64 {
        let (d, m) = (self.d, self.m);
        let (_, _, t2) = self.split(flat);
        let n = data.n() as f64;
        grad.fill(0.0);
        let mut h = vec![0.0; m];
        let mut sse = 0.0;
        for i in 0..data.n() {
            let z = data.input(i);
            self.hidden_into(flat, z, &mut h);
            let g: f64 = h.iter().zip(t2).map(|(a, b)| a * b).sum();
            if let Some(p) = preds.as_deref_mut() {
                p[i] = g;
            }
            let e = data.y[i] - g;
            sse += e * e;
            let c = -2.0 * e / n;
            let (g0, rest) = grad.split_at_mut(m);
            let (g1, g2) = rest.split_at_mut(m * d);
            for k in 0..m {
                g2[k] += c * h[k];
                let back = c * t2[k] * (1.0 - h[k] * h[k]);
                g0[k] += back;
                for (gw, zj) in g1[k * d..(k + 1) * d].iter_mut().zip(z) {
                    *gw += back * zj;
                }
            }
        }
        let mut penalty = 0.0;
        for (gk, tk) in grad.iter_mut().zip(flat) {
            *gk += 2.0 * alpha * tk;
            penalty += tk * tk;
        }
        sse / n + alpha * penalty
    }
}

fn shape_of(params: &MlpParams, data: &NnDataset) -> Result<MlpShape> {
    if params.input_dim() != data.d() {
        return Err(Error::InvalidInput(format!(
            "network expects d = {}, data has d = {}",
            params.input_dim(),
            data.d()
        )));
    }
    Ok(MlpShape {
        d: params.input_dim(),
        m: params.hidden(),
    })
}

/// Network outputs on the training inputs.
pub fn predictions(params: &MlpParams, data: &NnDataset) -> Result<DVector<f64>> {
    let shape = shape_of(params, data)?;
    Ok(shape.predict(params.flatten().as_slice(), data))
}

/// `ρ_α(θ) = n⁻¹Σ(y_i − g_θ(z_i))² + α‖θ‖²`.
pub fn rho(params: &MlpParams, data: &NnDataset, alpha: f64) -> Result<f64> {
    let shape = shape_of(params, data)?;
    let mut scratch = vec![0.0; shape.param_count()];
    Ok(shape.rho_and_grad(params.flatten().as_slice(), data, alpha, &mut scratch))
}

/// Exact gradient of `ρ_α`.
pub fn rho_grad(params: &MlpParams, data: &NnDataset, alpha: f64) -> Result<MlpParams> {
    let shape = shape_of(params, data)?;
    let mut grad = vec![0.0; shape.param_count()];
    shape.rho_and_grad(params.flatten().as_slice(), data, alpha, &mut grad);
    MlpParams::from_flat(&grad, shape.d, shape.m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub initial_rho: f64,
    pub final_rho: f64,
    /// Set when the final objective exceeds the initial one.
    pub non_monotone: bool,
}

/// Full-batch gradient descent on `ρ_α`.
pub fn train_gd(data: &NnDataset, init: &MlpParams, lr: f64, alpha: f64, iters: usize) -> Result<TrainOutcome> {
    let shape = shape_of(init, data)?;
    if !init.is_finite() {
        return Err(Error::InvalidInput("non-finite initial parameters".into()));
    }
    let mut theta = init.flatten();
    let mut grad = vec![0.0; shape.param_count()];
    let initial_rho = shape.rho_and_grad(theta.as_slice(), data, alpha, &mut grad);
    for step in 1..=iters {
        if step > 1 {
            shape.rho_and_grad(theta.as_slice(), data, alpha, &mut grad);
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= lr * g;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
    }
    let final_rho = shape.rho_and_grad(theta.as_slice(), data, alpha, &mut grad);
    if !final_rho.is_finite() {
        return Err(Error::Divergence { step: iters });
    }
    Ok(TrainOutcome {
        params: MlpParams::from_flat(theta.as_slice(), shape.d, shape.m)?,
        initial_rho,
        final_rho,
        non_monotone: final_rho > initial_rho,
    })
}

/// Ground-truth generalization gap of a fitted network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeGap {
    /// `σ² + n⁻¹Σ(μ_i − g_i)² − n⁻¹Σ(y_i − g_i)²`.
    pub mean: f64,
    /// `mean · n/(2σ²)`, on the same scale as LFV; `None` when `σ² = 0`.
    pub sum: Option<f64>,
}

pub fn tilde_gap(params: &MlpParams, data: &NnDataset) -> Result<TildeGap> {
    let mu = data
        .mu_truth
        .as_ref()
        .ok_or(Error::EstimatorUnavailable("generalization gap needs the true mean function"))?;
    let g = predictions(params, data)?;
    Ok(tilde_gap_from_predictions(&g, data.y.as_slice(), mu.as_slice(), data.sigma_sq))
}

pub(crate) fn tilde_gap_from_predictions(g: &DVector<f64>, y: &[f64], mu: &[f64], sigma_sq: f64) -> TildeGap {
    let n = y.len() as f64;
    let test: f64 = mu.iter().zip(g.iter()).map(|(m, g)| (m - g).powi(2)).sum::<f64>() / n;
    let train: f64 = y.iter().zip(g.iter()).map(|(y, g)| (y - g).powi(2)).sum::<f64>() / n;
    let mean = sigma_sq + test - train;
    let sum = (sigma_sq > 0.0).then(|| mean * n / (2.0 * sigma_sq));
    TildeGap { mean, sum }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::central_difference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(d: usize, m: usize, rng: &mut ChaCha8Rng) -> MlpParams {
        let flat: Vec<f64> = (0..param_count(d, m)).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
        MlpParams::from_flat(&flat, d, m).unwrap()
    }

    fn random_data(n: usize, d: usize, rng: &mut ChaCha8Rng) -> NnDataset {
        let z = DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        NnDataset::new(z, y, None, 1.0).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(3, 4);
        assert_eq!(mlp_forward(&p, &[1.0, -2.0, 0.5]), 0.0);
    }

    #[test]
    fn theta0_hits_target() {
        let p = theta0_construct(5, 50).unwrap();
        assert_eq!(p.param_count(), 350);
        let g = mlp_forward(&p, &[1.0; 5]);
        assert!((g - 3.0 * 2.5f64.tanh()).abs() < 1e-15);
        assert!((g - 2.959_842_894_454_291).abs() < 1e-12);
        assert_eq!(mlp_forward(&p, &[1.0, -1.0, 2.0, -2.0, 0.0]), 0.0);
    }

    #[test]
    fn odd_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_params(4, 6, &mut rng);
        p.theta0.fill(0.0);
        let z = [0.3, -1.2, 0.8, 2.0];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        assert!((mlp_forward(&p, &z) + mlp_forward(&p, &neg)).abs() < 1e-14);
    }

    #[test]
    fn flatten_round_trip_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(3, 2, &mut rng);
        let flat = p.flatten();
        assert_eq!(flat[0], p.theta0[0]);
        assert_eq!(flat[2], p.theta1[(0, 0)]);
        assert_eq!(flat[3], p.theta1[(0, 1)]);
        assert_eq!(flat[5], p.theta1[(1, 0)]);
        assert_eq!(flat[8], p.theta2[0]);
        assert_eq!(MlpParams::from_flat(flat.as_slice(), 3, 2).unwrap(), p);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (n, d, m) = (20, 3, 4);
            let data = random_data(n, d, &mut rng);
            let p = random_params(d, m, &mut rng);
            let alpha = 0.05;
            let grad = rho_grad(&p, &data, alpha).unwrap().flatten();
            let fd = central_difference(
                |flat| rho(&MlpParams::from_flat(flat, d, m).unwrap(), &data, alpha).unwrap(),
                p.flatten().as_slice(),
                1e-5,
            );
            for (a, b) in grad.iter().zip(&fd) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
                assert!(rel < 1e-5, "analytic {a} vs fd {b}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_exact_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = DMatrix::from_fn(30, 4, |_, _| rng.sample(StandardNormal));
        let p = theta0_construct(4, 3).unwrap();
        let y = DVector::from_fn(30, |i, _| target_mean(z.row(i).transpose().as_slice()));
        let data = NnDataset::new(z, y, None, 1.0).unwrap();
        let g = rho_grad(&p, &data, 0.0).unwrap().flatten();
        assert!(g.amax() < 1e-12);

        // with the data term zero, only the ridge term remains
        let g = rho_grad(&p, &data, 0.3).unwrap().flatten();
        let want = p.flatten() * 0.6;
        assert!((g - want).amax() < 1e-12);
    }

    #[test]
    fn training_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = DMatrix::from_fn(40, 3, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(40, |i, _| target_mean(z.row(i).transpose().as_slice()));
        let data = NnDataset::new(z, y, None, 1.0).unwrap();
        let init = theta0_construct(3, 5).unwrap();
        let out = train_gd(&data, &init, 0.1, 0.0, 50).unwrap();
        assert!((out.params.flatten() - init.flatten()).amax() < 1e-10);

        let p = random_params(3, 5, &mut rng);
        let out = train_gd(&data, &p, 0.0, 0.1, 10).unwrap();
        assert_eq!(out.params, p);
        assert!(!out.non_monotone);
    }

    #[test]
    fn training_divergence_reports_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_data(10, 2, &mut rng);
        let p = random_params(2, 3, &mut rng);
        let err = train_gd(&data, &p, 1e200, 1.0, 10).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn tilde_gap_closed_forms() {
        // g ≡ 0, μ ≡ c
        let z = DMatrix::from_element(4, 1, 0.0);
        let y = DVector::from_vec(vec![1.5, -0.3, 2.2, 0.9]);
        let c = 0.7;
        let data = NnDataset::new(z, y.clone(), Some(DVector::from_element(4, c)), 2.0).unwrap();
        let gap = tilde_gap(&MlpParams::zeros(1, 2), &data).unwrap();
        let want = 2.0 + c * c - y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert_eq!(gap.mean, want);
        assert_eq!(gap.sum, Some(want * 4.0 / 4.0));

        let no_truth = NnDataset::new(DMatrix::zeros(2, 1), DVector::zeros(2), None, 1.0).unwrap();
        assert!(matches!(
            tilde_gap(&MlpParams::zeros(1, 1), &no_truth),
            Err(Error::EstimatorUnavailable(_))
        ));
    }

    #[test]
    fn tilde_gap_perfect_fit_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = DMatrix::from_fn(25, 3, |_, _| rng.sample(StandardNormal));
        let p = theta0_construct(3, 4).unwrap();
        let mu = predictions(&p, &NnDataset::new(z.clone(), DVector::zeros(25), None, 0.0).unwrap()).unwrap();
        let data = NnDataset::new(z, mu.clone(), Some(mu), 0.0).unwrap();
        let gap = tilde_gap(&p, &data).unwrap();
        assert_eq!(gap.mean, 0.0);
        assert_eq!(gap.sum, None);
    }
}
