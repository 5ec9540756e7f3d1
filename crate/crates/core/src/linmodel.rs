//! Ridge / quasi-Bayesian linear model.
//!
//! Everything is expressed through the thin SVD `X = U diag(s) Vᵀ` with
//! `U: n×n`, `V: p×n`. The p×p posterior covariance is never formed: the
//! estimators only see predictions `Xβ`, and the null space of `X` does not
//! move them, so sampling happens in the n-dimensional prediction space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const SINGULAR_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta0: Option<DVector<f64>>,
    pub sigma0_sq: f64,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        beta0: Option<DVector<f64>>,
        sigma0_sq: f64,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput("design must be non-empty".into()));
        }
        if y.len() != n {
            return Err(Error::InvalidInput(format!(
                "outcome length {} does not match n = {n}",
                y.len()
            )));
        }
        if !all_finite(x.as_slice()) || !all_finite(y.as_slice()) {
            return Err(Error::InvalidInput("non-finite design or outcome".into()));
        }
        if let Some(b) = &beta0 {
            if b.len() != p {
                return Err(Error::InvalidInput(format!(
                    "beta0 length {} does not match p = {p}",
                    b.len()
                )));
            }
            if !all_finite(b.as_slice()) {
                return Err(Error::InvalidInput("non-finite beta0".into()));
            }
        }
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::InvalidInput("sigma0_sq must be positive".into()));
        }
        Ok(Dataset {
            x,
            y,
            beta0,
            sigma0_sq,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Thin SVD of an n×p design with n <= p.
#[derive(Debug, Clone)]
pub struct SvdCache {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdCache {
    /// Builds the cache from known factors, e.g. a synthetic `X = U S Vᵀ`.
    pub fn from_factors(u: DMatrix<f64>, s: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let n = s.len();
        if u.shape() != (n, n) || v.ncols() != n || v.nrows() < n {
            return Err(Error::InvalidInput(format!(
                "inconsistent SVD factor shapes: U {:?}, s {}, V {:?}",
                u.shape(),
                n,
                v.shape()
            )));
        }
        if s.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput(
                "singular values must be finite and nonnegative".into(),
            ));
        }
        if s.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "singular values must be nonincreasing".into(),
            ));
        }
        Ok(SvdCache { u, s, v })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    /// Singular values with the numerically-zero tail set to exactly 0.
    pub fn effective_s(&self) -> DVector<f64> {
        let cutoff = self.s.iter().cloned().fold(0.0, f64::max) * SINGULAR_CUTOFF;
        self.s.map(|x| if x <= cutoff { 0.0 } else { x })
    }

    /// `U diag(s) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[k];
        }
        us * self.v.transpose()
    }
}

/// Thin SVD of `x`; rejects tall designs instead of transposing them.
pub fn svd_decompose(x: &DMatrix<f64>) -> Result<SvdCache> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("design must be non-empty".into()));
    }
    if !all_finite(x.as_slice()) {
        return Err(Error::InvalidInput("non-finite design entry".into()));
    }
    if n > p {
        return Err(Error::Orientation { n, p });
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vt");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let s = DVector::from_iterator(n, order.iter().map(|&k| sv[k].max(0.0)));
    let u = DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    let v = DMatrix::from_fn(p, n, |i, j| v_t[(order[j], i)]);
    SvdCache::from_factors(u, s, v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeSpec {
    pub alpha: f64,
    pub sigma0_sq: f64,
}

impl RidgeSpec {
    pub fn new(alpha: f64, sigma0_sq: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput("alpha must be positive".into()));
        }
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::InvalidInput("sigma0_sq must be positive".into()));
        }
        Ok(RidgeSpec { alpha, sigma0_sq })
    }
}

/// Hat-matrix eigenvalues `r_i = (s_i²/n) / (s_i²/n + α)`, in the order of `s`.
pub fn hat_spectrum(svd: &SvdCache, alpha: f64) -> DVector<f64> {
    let n = svd.n() as f64;
    svd.effective_s().map(|s| {
        let lambda = s * s / n;
        lambda / (lambda + alpha)
    })
}

/// Gaussian quasi-posterior `N(β̂_α, Q_α)` held in spectral form.
#[derive(Debug, Clone)]
pub struct QuasiPosterior {
    pub beta_hat: DVector<f64>,
    pub svd: SvdCache,
    pub spec: RidgeSpec,
    /// Posterior sd along each right-singular direction.
    pub(crate) post_sd: DVector<f64>,
    /// Hat-matrix eigenvalues, cached.
    pub(crate) hat: DVector<f64>,
    /// `Xβ̂_α = U diag(r) Uᵀ y`.
    pub(crate) fitted: DVector<f64>,
}

impl QuasiPosterior {
    pub fn post_sd(&self) -> &DVector<f64> {
        &self.post_sd
    }

    pub fn hat(&self) -> &DVector<f64> {
        &self.hat
    }

    pub fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    pub fn n(&self) -> usize {
        self.svd.n()
    }
}

/// Ridge fit computing the SVD numerically.
pub fn ridge_fit(data: &Dataset, spec: RidgeSpec) -> Result<QuasiPosterior> {
    let svd = svd_decompose(&data.x)?;
    ridge_fit_with_svd(data, svd, spec)
}

/// Ridge fit reusing a known SVD of `data.x`.
pub fn ridge_fit_with_svd(data: &Dataset, svd: SvdCache, spec: RidgeSpec) -> Result<QuasiPosterior> {
    if svd.n() != data.n() || svd.p() != data.p() {
        return Err(Error::InvalidInput(format!(
            "SVD is for a {}x{} design, dataset is {}x{}",
            svd.n(),
            svd.p(),
            data.n(),
            data.p()
        )));
    }
    let nf = data.n() as f64;
    let s = svd.effective_s();
    let uty = svd.u.tr_mul(&data.y);

    let hat = hat_spectrum(&svd, spec.alpha);
    let coef = DVector::from_fn(s.len(), |k, _| {
        (s[k] / nf) / (s[k] * s[k] / nf + spec.alpha) * uty[k]
    });
    let beta_hat = &svd.v * &coef;
    let fitted = &svd.u * hat.component_mul(&uty);
    let post_sd = s.map(|sk| (spec.sigma0_sq / nf / (sk * sk / nf + spec.alpha)).sqrt());

    Ok(QuasiPosterior {
        beta_hat,
        svd,
        spec,
        post_sd,
        hat,
        fitted,
    })
}

/// Draws `count` predictions `Xβ` with `β ~ N(β̂_α, Q_α)`, O(n²) each.
pub fn posterior_sample<R: Rng + ?Sized>(
    post: &QuasiPosterior,
    count: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let n = post.n();
    let s = post.svd.effective_s();
    let scale = DVector::from_fn(n, |k, _| s[k] * post.post_sd[k]);
    let mut z = DVector::zeros(n);
    (0..count)
        .map(|_| {
            for k in 0..n {
                let e: f64 = rng.sample(StandardNormal);
                z[k] = scale[k] * e;
            }
            let mut mu = post.fitted.clone();
            mu.gemv(1.0, &post.svd.u, &z, 1.0);
            mu
        })
        .collect()
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
