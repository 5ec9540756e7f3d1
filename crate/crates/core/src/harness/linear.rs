use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimators::{self, GapReport, ReportMeta};
use crate::langevin::{self, LangevinConfig};
use crate::linmodel::{posterior_sample, ridge_fit_with_svd, RidgeSpec};
use crate::rng::{chain_seed, stream, Purpose};
use crate::stats::Summary;
use crate::synthetic::{draw_outcome, make_linear_design, LinearDesign, SingularProfile};

use super::config::{Estimator, ExperimentConfig, Mode};
use super::par_map;

/// Per-estimator mean and sd across replications; `None` when not requested.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearSummary {
    pub delta: Option<Summary>,
    pub efv_analytic: Option<Summary>,
    pub fv_mc: Option<Summary>,
    pub lfv: Option<Summary>,
    pub jfv_analytic: Option<Summary>,
    pub tic0: Option<Summary>,
    pub tic_kappa: Option<Summary>,
    pub ric: Option<Summary>,
}

impl LinearSummary {
    pub fn of(rows: &[GapReport]) -> Self {
        let col = |f: fn(&GapReport) -> Option<f64>| {
            let xs: Vec<f64> = rows.iter().filter_map(f).collect();
            (!xs.is_empty()).then(|| Summary::of(&xs))
        };
        LinearSummary {
            delta: col(|r| r.delta),
            efv_analytic: col(|r| r.efv_analytic),
            fv_mc: col(|r| r.fv_mc),
            lfv: col(|r| r.lfv),
            jfv_analytic: col(|r| r.jfv_analytic),
            tic0: col(|r| r.tic0),
            tic_kappa: col(|r| r.tic_kappa),
            ric: col(|r| r.ric),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearRun {
    pub config: ExperimentConfig,
    /// Ordered by replication index.
    pub rows: Vec<GapReport>,
    pub summary: LinearSummary,
    /// Replications whose Langevin chain diverged (their `lfv` is empty).
    pub failed: usize,
}

pub fn run_linear(config: &ExperimentConfig) -> Result<LinearRun> {
    if config.mode != Mode::Linear {
        return Err(Error::Config {
            field: "mode",
            reason: "run_linear needs linear mode".into(),
        });
    }
    config.validate()?;
    let profile = SingularProfile::new(config.profile, config.n)?;
    let shared = if config.fixed_design {
        Some(make_linear_design(profile, &mut stream(config.seed, 0, Purpose::Design))?)
    } else {
        None
    };
    let results = par_map(config.threads, config.reps, |rep| {
        replicate(config, profile, shared.as_ref(), rep)
    })?;
    let mut rows = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        let (report, diverged) = r?;
        failed += diverged as usize;
        rows.push(report);
    }
    let summary = LinearSummary::of(&rows);
    Ok(LinearRun {
        config: config.clone(),
        rows,
        summary,
        failed,
    })
}

/// One replication; the flag reports a diverged chain.
pub fn replicate(
    config: &ExperimentConfig,
    profile: SingularProfile,
    shared: Option<&LinearDesign>,
    rep: usize,
) -> Result<(GapReport, bool)> {
    let key = rep as u64;
    let owned;
    let design = match shared {
        Some(d) => d,
        None => {
            owned = make_linear_design(profile, &mut stream(config.seed, key, Purpose::Design))?;
            &owned
        }
    };
    let data = draw_outcome(design, config.sigma_sq, &mut stream(config.seed, key, Purpose::Outcome))?;
    let svd = &design.svd;
    let alpha = config.alpha;
    let sigma_sq = config.sigma_sq;

    let meta = ReportMeta {
        replication: rep,
        n: data.n(),
        p: data.p(),
        profile: config.profile.name().to_string(),
        alpha,
        kappa: config.kappa,
    };
    let mut report = GapReport::empty(config.seed, meta);
    if config.wants(Estimator::Delta) {
        report.delta = Some(estimators::gap_delta(svd, alpha));
    }
    if config.wants(Estimator::Efv) {
        let (efv, terms) = estimators::efv_analytic(svd, Some(&design.beta0), alpha, sigma_sq)?;
        report.efv_analytic = Some(efv);
        report.efv_terms = Some(terms);
    }
    if config.wants(Estimator::Jfv) {
        report.jfv_analytic = Some(estimators::jfv_analytic(svd, Some(&design.beta0), alpha, sigma_sq)?);
    }

    let needs_fit = [Estimator::Fv, Estimator::Lfv, Estimator::Tic0, Estimator::TicKappa, Estimator::Ric]
        .iter()
        .any(|e| config.wants(*e));
    if !needs_fit {
        return Ok((report, false));
    }
    let post = ridge_fit_with_svd(&data, svd.clone(), RidgeSpec::new(alpha, sigma_sq)?)?;
    let t = config.t[0];

    if config.wants(Estimator::Fv) {
        let samples = posterior_sample(&post, t, &mut stream(config.seed, key, Purpose::Posterior));
        report.fv_mc = Some(estimators::fv_mc(&samples, &data.y, sigma_sq)?);
    }
    if config.wants(Estimator::Tic0) {
        report.tic0 = Some(estimators::tic(&data, svd, &post.beta_hat, 0.0)?);
    }
    if config.wants(Estimator::TicKappa) {
        report.tic_kappa = Some(estimators::tic(&data, svd, &post.beta_hat, config.kappa)?);
    }
    if config.wants(Estimator::Ric) {
        report.ric = Some(estimators::ric(&data, svd, &post.beta_hat, alpha)?);
    }
    let mut diverged = false;
    if config.wants(Estimator::Lfv) {
        let kappa_n = data.n() as f64 / sigma_sq;
        let chain = LangevinConfig::new(config.step, kappa_n, t, config.burn_in, chain_seed(config.seed, key))?;
        match linear_lfv(&data.x, &data.y, &post.beta_hat, alpha, sigma_sq, &chain) {
            Ok(v) => report.lfv = Some(v),
            Err(Error::Divergence { .. }) => diverged = true,
            Err(e) => return Err(e),
        }
    }
    Ok((report, diverged))
}

/// LFV of a ridge chain started at `init`.
pub fn linear_lfv(
    x: &nalgebra::DMatrix<f64>,
    y: &DVector<f64>,
    init: &DVector<f64>,
    alpha: f64,
    sigma_sq: f64,
    chain: &LangevinConfig,
) -> Result<f64> {
    let trace = langevin::run_chain(
        langevin::ridge_loss_grad(x, y, alpha),
        langevin::linear_predict(x),
        init,
        y,
        sigma_sq,
        chain,
    )?;
    Ok(langevin::lfv(&trace))
}
