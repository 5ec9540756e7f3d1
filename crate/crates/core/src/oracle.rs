//! Brute-force reference computations.
//!
//! These work on dense p×p and n×n matrices and share no code with the
//! spectral implementations in [`crate::linmodel`] and [`crate::estimators`].
//! They are only meant for small instances (p up to a few dozen) and back the
//! test suites and `gapfv selfcheck`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::stats;

/// Relative eigenvalue floor used when thresholding dense eigendecompositions.
const DENSE_EIG_FLOOR: f64 = 1e-10;

fn penalized_gram(x: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    x.tr_mul(x) / n + DMatrix::identity(p, p) * alpha
}

fn chol(m: DMatrix<f64>) -> Cholesky<f64, nalgebra::Dyn> {
    Cholesky::new(m).expect("penalized Gram matrix is positive definite")
}

/// `(XᵀX/n + αI)⁻¹ Xᵀy/n` by a dense p×p solve.
pub fn dense_ridge(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let n = x.nrows() as f64;
    chol(penalized_gram(x, alpha)).solve(&(x.tr_mul(y) / n))
}

/// `n⁻¹ X (n⁻¹XᵀX + αI)⁻¹ Xᵀ`.
pub fn dense_hat(x: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let solved = chol(penalized_gram(x, alpha)).solve(&x.transpose());
    x * solved / n
}

/// Covariance of `Xβ` under `β ~ N(β̂, Q_α)` with `Q_α = σ₀²/n (XᵀX/n + αI)⁻¹`.
pub fn dense_prediction_cov(x: &DMatrix<f64>, alpha: f64, sigma0_sq: f64) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let q = chol(penalized_gram(x, alpha)).inverse() * (sigma0_sq / n);
    x * q * x.transpose()
}

fn bias_vector(x: &DMatrix<f64>, h: &DMatrix<f64>, beta0: &DVector<f64>) -> DVector<f64> {
    let n = x.nrows();
    (DMatrix::identity(n, n) - h) * (x * beta0)
}

/// Dense expected FV: tr H − 1.5 tr(H∘H) + tr(H∘H²) + σ₀⁻² tr(H∘(wwᵀ)).
pub fn dense_efv(x: &DMatrix<f64>, beta0: &DVector<f64>, alpha: f64, sigma0_sq: f64) -> f64 {
    let h = dense_hat(x, alpha);
    let h2 = &h * &h;
    let w = bias_vector(x, &h, beta0);
    let ww = &w * w.transpose();
    h.trace() - 1.5 * h.component_mul(&h).trace()
        + h.component_mul(&h2).trace()
        + h.component_mul(&ww).trace() / sigma0_sq
}

/// Dense expected J-FV: the matrix-product counterpart of [`dense_efv`].
pub fn dense_jfv(x: &DMatrix<f64>, beta0: &DVector<f64>, alpha: f64, sigma0_sq: f64) -> f64 {
    let h = dense_hat(x, alpha);
    let h2 = &h * &h;
    let h3 = &h2 * &h;
    let w = bias_vector(x, &h, beta0);
    let ww = &w * w.transpose();
    h.trace() - 1.5 * h2.trace() + h3.trace() + (&h * ww).trace() / sigma0_sq
}

fn outer_score(x: &DMatrix<f64>, y: &DVector<f64>, beta_hat: &DVector<f64>, sigma0_sq: f64) -> DMatrix<f64> {
    let resid = y - x * beta_hat;
    let p = x.ncols();
    let mut f = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let xi = x.row(i).transpose();
        f += &xi * xi.transpose() * (resid[i] * resid[i]);
    }
    f / (sigma0_sq * sigma0_sq)
}

/// Dense `tr{F̂ Ĝ⁺_κ}` with `Ĝ = XᵀX/σ₀²` eigendecomposed in p×p.
pub fn dense_tic(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta_hat: &DVector<f64>,
    sigma0_sq: f64,
    kappa: f64,
) -> f64 {
    let f = outer_score(x, y, beta_hat, sigma0_sq);
    let g = x.tr_mul(x) / sigma0_sq;
    let eig = SymmetricEigen::new(g);
    let top = eig.eigenvalues.amax();
    let p = x.ncols();
    let mut ginv = DMatrix::zeros(p, p);
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > kappa && lambda > DENSE_EIG_FLOOR * top {
            let v = eig.eigenvectors.column(j);
            ginv += v * v.transpose() / lambda;
        }
    }
    (f * ginv).trace()
}

/// Dense `tr{F̂ (Ĝ + nα/σ₀² I)⁻¹}`.
pub fn dense_ric(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta_hat: &DVector<f64>,
    sigma0_sq: f64,
    alpha: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let f = outer_score(x, y, beta_hat, sigma0_sq);
    let reg = x.tr_mul(x) / sigma0_sq + DMatrix::identity(p, p) * (n * alpha / sigma0_sq);
    (f * chol(reg).inverse()).trace()
}

/// Result of a Monte-Carlo average together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Nested Monte Carlo for `E_y[FV]`: outer loop draws `y ~ N(Xβ₀, σ₀²I)`,
/// inner loop draws `β` from the dense p-dimensional Gaussian posterior.
pub fn nested_mc_efv<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    beta0: &DVector<f64>,
    alpha: f64,
    sigma0_sq: f64,
    outer: usize,
    inner: usize,
    rng: &mut R,
) -> McEstimate {
    let n = x.nrows();
    let p = x.ncols();
    let nf = n as f64;
    let gram = chol(penalized_gram(x, alpha));
    let q = gram.inverse() * (sigma0_sq / nf);
    let l = chol(q).l();
    let mean_y = x * beta0;
    let sigma0 = sigma0_sq.sqrt();

    let mut fvs = Vec::with_capacity(outer);
    let mut z = DVector::zeros(p);
    for _ in 0..outer {
        let y = DVector::from_fn(n, |i, _| mean_y[i] + sigma0 * rng.sample::<f64, _>(StandardNormal));
        let beta_hat = gram.solve(&(x.tr_mul(&y) / nf));
        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        for _ in 0..inner {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let beta = &beta_hat + &l * &z;
            let mu = x * beta;
            for i in 0..n {
                let ll = (y[i] - mu[i]).powi(2) / (2.0 * sigma0_sq);
                sum[i] += ll;
                sum_sq[i] += ll * ll;
            }
        }
        let t = inner as f64;
        let fv: f64 = (0..n)
            .map(|i| {
                let m = sum[i] / t;
                sum_sq[i] / t - m * m
            })
            .sum();
        fvs.push(fv);
    }
    McEstimate {
        mean: stats::mean(&fvs),
        std_error: stats::std_error(&fvs),
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn scalar_hat_and_efv() {
        let x = DMatrix::from_element(1, 1, 1.0);
        assert!((dense_hat(&x, 1.0)[(0, 0)] - 0.5).abs() < 1e-15);
        let efv = dense_efv(&x, &DVector::zeros(1), 1.0, 1.0);
        assert!((efv - 0.25).abs() < 1e-15);
    }
}
