//! Random problem instances: Haar factors, singular-value profiles, linear and
//! network datasets, and the uniform-sphere moment self-test.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::{Dataset, SvdCache};
use crate::nn::{target_mean, NnDataset};

/// Matrix with orthonormal columns drawn from the Haar measure.
///
/// QR of a standard Gaussian matrix, with each column of Q multiplied by the
/// sign of the matching diagonal entry of R.
pub fn haar_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if cols > rows || cols == 0 {
        return Err(Error::InvalidInput(format!(
            "need 1 <= cols <= rows, got {rows}x{cols}"
        )));
    }
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (k, mut col) in q.column_iter_mut().enumerate() {
        if r[(k, k)] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// `s_1 = … = s_10 = √n`, the rest 0.
    Intrinsic10,
    /// `s_i = √n / i`.
    InverseLinear,
    /// `s_i = √n / √i`.
    InverseSqrt,
}

impl ProfileKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProfileKind::Intrinsic10 => "intrinsic10",
            ProfileKind::InverseLinear => "inverse-linear",
            ProfileKind::InverseSqrt => "inverse-sqrt",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intrinsic10" | "i" => Ok(ProfileKind::Intrinsic10),
            "inverse-linear" | "ii" => Ok(ProfileKind::InverseLinear),
            "inverse-sqrt" | "iii" => Ok(ProfileKind::InverseSqrt),
            other => Err(Error::Config {
                field: "profile",
                reason: format!("unknown profile `{other}` (intrinsic10, inverse-linear, inverse-sqrt)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularProfile {
    pub kind: ProfileKind,
    pub n: usize,
}

impl SingularProfile {
    pub fn new(kind: ProfileKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config { field: "n", reason: "must be at least 1".into() });
        }
        if kind == ProfileKind::Intrinsic10 && n < 10 {
            return Err(Error::Config {
                field: "n",
                reason: format!("intrinsic10 profile needs n >= 10, got {n}"),
            });
        }
        Ok(SingularProfile { kind, n })
    }

    pub fn singular_values(&self) -> DVector<f64> {
        let root_n = (self.n as f64).sqrt();
        DVector::from_fn(self.n, |i, _| {
            let idx = (i + 1) as f64;
            match self.kind {
                ProfileKind::Intrinsic10 => {
                    if i < 10 {
                        root_n
                    } else {
                        0.0
                    }
                }
                ProfileKind::InverseLinear => root_n / idx,
                ProfileKind::InverseSqrt => root_n / idx.sqrt(),
            }
        })
    }
}

/// Design factors `(U, s, V)` and true coefficients, without the outcome.
#[derive(Debug, Clone)]
pub struct LinearDesign {
    pub x: DMatrix<f64>,
    pub svd: SvdCache,
    pub beta0: DVector<f64>,
}

/// Draws `U` (n×n) and `V` (2n×n) from Haar measure, `β₀ ~ N(0, I/p)`.
pub fn make_linear_design<R: Rng + ?Sized>(profile: SingularProfile, rng: &mut R) -> Result<LinearDesign> {
    let n = profile.n;
    let p = 2 * n;
    let u = haar_orthonormal(n, n, rng)?;
    let v = haar_orthonormal(p, n, rng)?;
    let beta_sd = 1.0 / (p as f64).sqrt();
    let beta0 = DVector::from_fn(p, |_, _| beta_sd * rng.sample::<f64, _>(StandardNormal));
    let svd = SvdCache::from_factors(u, profile.singular_values(), v)?;
    let x = svd.reconstruct();
    Ok(LinearDesign { x, svd, beta0 })
}

/// `y ~ N(Xβ₀, σ₀² I)` for a fixed design.
pub fn draw_outcome<R: Rng + ?Sized>(design: &LinearDesign, sigma0_sq: f64, rng: &mut R) -> Result<Dataset> {
    let sd = sigma0_sq.sqrt();
    let mean = &design.x * &design.beta0;
    let y = mean.map(|m| m + sd * rng.sample::<f64, _>(StandardNormal));
    Dataset::new(design.x.clone(), y, Some(design.beta0.clone()), sigma0_sq)
}

/// Linear instance with `p = 2n`; the returned SVD is the generating one.
pub fn make_linear_dataset<R: Rng + ?Sized>(
    profile: SingularProfile,
    sigma0_sq: f64,
    rng: &mut R,
) -> Result<(Dataset, SvdCache)> {
    let design = make_linear_design(profile, rng)?;
    let data = draw_outcome(&design, sigma0_sq, rng)?;
    Ok((data, design.svd))
}

/// `z_i ~ N(0, I_d)`, `y_i = 3 tanh(⟨z_i, 1⟩/2) + N(0, σ²)`.
pub fn make_nn_dataset<R: Rng + ?Sized>(n: usize, d: usize, sigma_sq: f64, rng: &mut R) -> Result<NnDataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput("need n >= 1 and d >= 1".into()));
    }
    if !(sigma_sq >= 0.0) {
        return Err(Error::InvalidInput("sigma_sq must be nonnegative".into()));
    }
    let z = DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    let mu = DVector::from_fn(n, |i, _| {
        let row: Vec<f64> = z.row(i).iter().copied().collect();
        target_mean(&row)
    });
    let sd = sigma_sq.sqrt();
    let y = if sigma_sq == 0.0 {
        mu.clone()
    } else {
        mu.map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
    };
    NnDataset::new(z, y, Some(mu), sigma_sq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereMoment {
    pub empirical: f64,
    pub analytic: f64,
    pub std_error: f64,
}

/// Monte-Carlo `E[(vᵀAv)²]` for `v` uniform on the unit sphere and diagonal
/// `A`, next to `(2 tr A² + (tr A)²) / (n(n+2))`.
pub fn sphere_moment_selftest<R: Rng + ?Sized>(a_diag: &[f64], draws: usize, rng: &mut R) -> Result<SphereMoment> {
    let n = a_diag.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty diagonal".into()));
    }
    if draws < 1000 {
        return Err(Error::InvalidInput(format!("need at least 1000 draws, got {draws}")));
    }
    let tr: f64 = a_diag.iter().sum();
    let tr2: f64 = a_diag.iter().map(|a| a * a).sum();
    let nf = n as f64;
    let analytic = (2.0 * tr2 + tr * tr) / (nf * (nf + 2.0));

    let mut v = vec![0.0; n];
    let mut vals = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut norm2 = 0.0;
        for x in v.iter_mut() {
            *x = rng.sample(StandardNormal);
            norm2 += *x * *x;
        }
        let quad: f64 = v.iter().zip(a_diag).map(|(x, a)| a * x * x).sum::<f64>() / norm2;
        vals.push(quad * quad);
    }
    Ok(SphereMoment {
        empirical: crate::stats::mean(&vals),
        analytic,
        std_error: crate::stats::std_error(&vals),
    })
}
