//! Gap estimators and their closed forms.
//!
//! With `H_α = U diag(r) Uᵀ`, every trace below reduces to O(n²) work on the
//! left singular vectors: `H_ii = Σ_k U_ik² r_k`, `(H²)_ii = Σ_k U_ik² r_k²`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linmodel::{hat_spectrum, Dataset, SvdCache};

/// Gibbs generalization gap `Δ(α) = tr H_α = Σ r_i`.
pub fn gap_delta(svd: &SvdCache, alpha: f64) -> f64 {
    hat_spectrum(svd, alpha).sum()
}

/// The three trace terms of the expected-FV identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfvTerms {
    /// `tr{H ∘ H}`
    pub hh: f64,
    /// `tr{H ∘ H²}`
    pub hh2: f64,
    /// `σ₀⁻² tr{H ∘ ((I−H)Xβ₀)^{⊗2}}`
    pub bias: f64,
}

impl EfvTerms {
    /// `Δ − 1.5 tr{H∘H} + tr{H∘H²} + bias`.
    pub fn assemble(&self, delta: f64) -> f64 {
        delta - 1.5 * self.hh + self.hh2 + self.bias
    }
}

/// Diagonals of `U diag(a) Uᵀ` and `U diag(b) Uᵀ` in one pass over `U`.
fn weighted_diagonals(u: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = u.nrows();
    let mut da = DVector::zeros(n);
    let mut db = DVector::zeros(n);
    for (k, col) in u.column_iter().enumerate() {
        for i in 0..n {
            let w = col[i] * col[i];
            da[i] += w * a[k];
            db[i] += w * b[k];
        }
    }
    (da, db)
}

/// `(I − H_α) Xβ₀` expressed in the left singular basis: entry k is
/// `(1 − r_k) s_k (Vᵀβ₀)_k`.
fn bias_coordinates(svd: &SvdCache, r: &DVector<f64>, beta0: &DVector<f64>) -> DVector<f64> {
    let s = svd.effective_s();
    let c = svd.v.tr_mul(beta0);
    DVector::from_fn(svd.n(), |k, _| (1.0 - r[k]) * s[k] * c[k])
}

fn require_beta0(beta0: Option<&DVector<f64>>, p: usize) -> Result<&DVector<f64>> {
    let b = beta0.ok_or(Error::EstimatorUnavailable(
        "closed-form FV needs the true coefficients beta0",
    ))?;
    if b.len() != p {
        return Err(Error::InvalidInput(format!(
            "beta0 length {} does not match p = {p}",
            b.len()
        )));
    }
    Ok(b)
}

/// Closed-form `E_y[FV(α)]` and its trace terms.
pub fn efv_analytic(
    svd: &SvdCache,
    beta0: Option<&DVector<f64>>,
    alpha: f64,
    sigma0_sq: f64,
) -> Result<(f64, EfvTerms)> {
    efv_with_coefficient(svd, beta0, alpha, sigma0_sq, 1.5)
}

/// Same as [`efv_analytic`] with the `tr{H∘H}` coefficient exposed, so the
/// self-check can confirm its oracle notices a wrong value.
pub(crate) fn efv_with_coefficient(
    svd: &SvdCache,
    beta0: Option<&DVector<f64>>,
    alpha: f64,
    sigma0_sq: f64,
    hh_coefficient: f64,
) -> Result<(f64, EfvTerms)> {
    let beta0 = require_beta0(beta0, svd.p())?;
    let r = hat_spectrum(svd, alpha);
    let r2 = r.map(|v| v * v);
    let (h_diag, h2_diag) = weighted_diagonals(&svd.u, &r, &r2);
    let w = &svd.u * bias_coordinates(svd, &r, beta0);

    let hh = h_diag.dot(&h_diag);
    let hh2 = h_diag.dot(&h2_diag);
    let bias = h_diag.iter().zip(w.iter()).map(|(h, w)| h * w * w).sum::<f64>() / sigma0_sq;
    let terms = EfvTerms { hh, hh2, bias };
    let delta = r.sum();
    Ok((delta - hh_coefficient * hh + hh2 + bias, terms))
}

/// Closed-form `E_y[J-FV(α)]`: the matrix-product analogue of [`efv_analytic`].
pub fn jfv_analytic(
    svd: &SvdCache,
    beta0: Option<&DVector<f64>>,
    alpha: f64,
    sigma0_sq: f64,
) -> Result<f64> {
    let beta0 = require_beta0(beta0, svd.p())?;
    let r = hat_spectrum(svd, alpha);
    let b = bias_coordinates(svd, &r, beta0);
    let mut total = 0.0;
    let mut bias = 0.0;
    for k in 0..r.len() {
        let rk = r[k];
        total += rk - 1.5 * rk * rk + rk * rk * rk;
        bias += rk * b[k] * b[k];
    }
    Ok(total + bias / sigma0_sq)
}

/// Sum over observations of the divisor-T empirical variance of
/// `(y_i − μ_i)² / (2σ₀²)` across the rows of a prediction sample.
///
/// Shared by [`fv_mc`] and [`crate::langevin::lfv`].
pub fn functional_variance<'a, I>(rows: I, y: &[f64], sigma0_sq: f64) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let n = y.len();
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut count = 0usize;
    for row in rows {
        if row.len() != n {
            return Err(Error::InvalidInput(format!(
                "prediction row has length {}, expected {n}",
                row.len()
            )));
        }
        count += 1;
        let c = count as f64;
        for i in 0..n {
            let ll = (y[i] - row[i]).powi(2) / (2.0 * sigma0_sq);
            let d = ll - mean[i];
            mean[i] += d / c;
            m2[i] += d * (ll - mean[i]);
        }
    }
    if count < 2 {
        return Err(Error::InsufficientSamples { got: count });
    }
    Ok(m2.iter().sum::<f64>() / count as f64)
}

/// Monte-Carlo FV from posterior prediction draws.
pub fn fv_mc(samples: &[DVector<f64>], y: &DVector<f64>, sigma0_sq: f64) -> Result<f64> {
    functional_variance(samples.iter().map(|s| s.as_slice()), y.as_slice(), sigma0_sq)
}

fn squared_residuals(data: &Dataset, beta_hat: &DVector<f64>) -> Result<DVector<f64>> {
    if beta_hat.len() != data.p() {
        return Err(Error::InvalidInput(format!(
            "beta_hat length {} does not match p = {}",
            beta_hat.len(),
            data.p()
        )));
    }
    Ok((&data.y - &data.x * beta_hat).map(|r| r * r))
}

/// `TIC(κ) = tr{F̂ Ĝ⁺_κ}` with `F̂ = Σ r_i² x_i x_iᵀ/σ₀⁴` and `Ĝ = XᵀX/σ₀²`.
///
/// `Ĝ` has eigenvectors `V` and eigenvalues `s_k²/σ₀²`, so the trace becomes
/// `σ₀⁻² Σ_i r_i² Σ_{k kept} U_ik²` where direction k is kept when its
/// eigenvalue is strictly above `κ`.
pub fn tic(data: &Dataset, svd: &SvdCache, beta_hat: &DVector<f64>, kappa: f64) -> Result<f64> {
    let res2 = squared_residuals(data, beta_hat)?;
    let s = svd.effective_s();
    let keep = s.map(|sk| {
        let lambda = sk * sk / data.sigma0_sq;
        if sk > 0.0 && lambda > kappa {
            1.0
        } else {
            0.0
        }
    });
    let (weight, _) = weighted_diagonals(&svd.u, &keep, &keep);
    Ok(res2.dot(&weight) / data.sigma0_sq)
}

/// `RIC = tr{F̂ (Ĝ + nα/σ₀² I)⁻¹}`, i.e. TIC with `Ĝ` regularized by the
/// prior precision. Equals `σ₀⁻² Σ_i r_i² (H_α)_ii`.
pub fn ric(data: &Dataset, svd: &SvdCache, beta_hat: &DVector<f64>, alpha: f64) -> Result<f64> {
    let res2 = squared_residuals(data, beta_hat)?;
    let r = hat_spectrum(svd, alpha);
    let (h_diag, _) = weighted_diagonals(&svd.u, &r, &r);
    Ok(res2.dot(&h_diag) / data.sigma0_sq)
}

/// Replication settings carried alongside a [`GapReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub replication: usize,
    pub n: usize,
    pub p: usize,
    pub profile: String,
    pub alpha: f64,
    pub kappa: f64,
}

/// One replication's estimates; `None` marks an estimator that was not run.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub delta: Option<f64>,
    pub efv_analytic: Option<f64>,
    pub efv_terms: Option<EfvTerms>,
    pub fv_mc: Option<f64>,
    pub lfv: Option<f64>,
    pub jfv_analytic: Option<f64>,
    pub tic0: Option<f64>,
    pub tic_kappa: Option<f64>,
    pub ric: Option<f64>,
    pub seed: u64,
    pub meta: ReportMeta,
}

impl GapReport {
    pub fn empty(seed: u64, meta: ReportMeta) -> Self {
        GapReport {
            delta: None,
            efv_analytic: None,
            efv_terms: None,
            fv_mc: None,
            lfv: None,
            jfv_analytic: None,
            tic0: None,
            tic_kappa: None,
            ric: None,
            seed,
            meta,
        }
    }
}
