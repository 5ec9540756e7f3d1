use std::cell::RefCell;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::langevin::{self, LangevinConfig};
use crate::nn::{perturbed_init, tilde_gap, train_gd, MlpShape, NnDataset};
use crate::rng::{chain_seed, stream, Purpose};
use crate::stats::Summary;
use crate::synthetic::make_nn_dataset;

use super::config::{Estimator, ExperimentConfig, Mode};
use super::par_map;

/// One replication at one chain length.
#[derive(Debug, Clone, PartialEq)]
pub struct NnRepRow {
    pub rep: usize,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub t: usize,
    pub lfv: Option<f64>,
    pub tilde_mean: Option<f64>,
    pub tilde_sum: Option<f64>,
    pub seed: u64,
}

/// Summary of one (d, M, T) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NnCell {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub t: usize,
    /// Over the successful chains.
    pub lfv: Option<Summary>,
    pub tilde_mean: Option<f64>,
    pub tilde_sum: Option<f64>,
    pub tilde_count: usize,
    /// Replications lost to divergence in training or in the chain.
    pub failed: usize,
    /// Trainings that ended above their starting objective.
    pub non_monotone: usize,
}

#[derive(Debug, Clone)]
pub struct NnRun {
    pub config: ExperimentConfig,
    pub reps: Vec<NnRepRow>,
    pub cells: Vec<NnCell>,
}

impl NnRun {
    pub fn failed(&self) -> usize {
        self.cells.iter().map(|c| c.failed).sum()
    }
}

#[derive(Debug, Clone, Default)]
struct RepOutcome {
    /// One entry per configured chain length.
    lfv: Option<Vec<f64>>,
    tilde_mean: Option<f64>,
    tilde_sum: Option<f64>,
    failed: bool,
    non_monotone: bool,
}

/// Replication key of `rep` inside cell `cell`.
fn rep_key(cell: usize, rep: usize) -> u64 {
    ((cell as u64) << 32) | rep as u64
}

pub fn run_nn(config: &ExperimentConfig) -> Result<NnRun> {
    if config.mode != Mode::Nn {
        return Err(Error::Config {
            field: "mode",
            reason: "run_nn needs nn mode".into(),
        });
    }
    config.validate()?;
    let lfv_reps = if config.wants(Estimator::Lfv) { config.reps } else { 0 };
    let tilde_reps = if config.wants(Estimator::Tilde) { config.tilde_reps } else { 0 };
    let total = lfv_reps.max(tilde_reps);

    let mut reps = Vec::new();
    let mut cells = Vec::new();
    let grid: Vec<(usize, usize)> = config
        .d
        .iter()
        .flat_map(|&d| config.m.iter().map(move |&m| (d, m)))
        .collect();
    for (ci, &(d, m)) in grid.iter().enumerate() {
        let outcomes = par_map(config.threads, total, |rep| {
            replicate(config, d, m, rep_key(ci, rep), rep < lfv_reps, rep < tilde_reps)
        })?;
        let outcomes: Vec<RepOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
        let p = MlpShape { d, m }.param_count();
        let failed = outcomes.iter().filter(|o| o.failed).count();
        let non_monotone = outcomes.iter().filter(|o| o.non_monotone).count();
        let tildes: Vec<f64> = outcomes.iter().filter_map(|o| o.tilde_mean).collect();
        let tilde_sums: Vec<f64> = outcomes.iter().filter_map(|o| o.tilde_sum).collect();
        let mean_of = |xs: &[f64]| (!xs.is_empty()).then(|| crate::stats::mean(xs));

        for (ti, &t) in config.t.iter().enumerate() {
            let lfvs: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.lfv.as_ref().map(|v| v[ti]))
                .collect();
            for (rep, o) in outcomes.iter().enumerate() {
                reps.push(NnRepRow {
                    rep,
                    d,
                    m,
                    n: config.n,
                    p,
                    t,
                    lfv: o.lfv.as_ref().map(|v| v[ti]),
                    tilde_mean: o.tilde_mean,
                    tilde_sum: o.tilde_sum,
                    seed: config.seed,
                });
            }
            cells.push(NnCell {
                d,
                m,
                n: config.n,
                p,
                t,
                lfv: (!lfvs.is_empty()).then(|| Summary::of(&lfvs)),
                tilde_mean: mean_of(&tildes),
                tilde_sum: mean_of(&tilde_sums),
                tilde_count: tildes.len(),
                failed,
                non_monotone,
            });
        }
    }
    Ok(NnRun {
        config: config.clone(),
        reps,
        cells,
    })
}

/// Trains one network and, if asked, runs one chain of length `max(T)` from
/// the trained weights. LFV at each `T_j` uses states `[⌊burn·T_j⌋, T_j)`,
/// which is what an independent chain of length `T_j` with the same noise
/// seed would have produced.
fn replicate(config: &ExperimentConfig, d: usize, m: usize, key: u64, want_lfv: bool, want_tilde: bool) -> Result<RepOutcome> {
    let data = make_nn_dataset(config.n, d, config.sigma_sq, &mut stream(config.seed, key, Purpose::Design))?;
    let init = perturbed_init(d, m, config.init_sd, &mut stream(config.seed, key, Purpose::Init))?;
    let mut out = RepOutcome::default();
    let trained = match train_gd(&data, &init, config.lr, config.alpha, config.train_iters) {
        Ok(t) => t,
        Err(Error::Divergence { .. }) => {
            out.failed = true;
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    out.non_monotone = trained.non_monotone;
    if want_tilde {
        let g = tilde_gap(&trained.params, &data)?;
        out.tilde_mean = Some(g.mean);
        out.tilde_sum = g.sum;
    }
    if want_lfv {
        let t_max = *config.t.iter().max().expect("validated non-empty");
        let chain = LangevinConfig::new(
            config.step,
            config.n as f64 / config.sigma_sq,
            t_max,
            0.0,
            chain_seed(config.seed, key),
        )?;
        match nn_chain(&data, d, m, config.alpha, &trained.params.flatten(), &chain) {
            Ok(trace) => {
                let vals = config
                    .t
                    .iter()
                    .map(|&t| {
                        let start = (config.burn_in * t as f64).floor() as usize;
                        langevin::lfv_range(&trace, start..t)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                out.lfv = Some(vals);
            }
            Err(Error::Divergence { .. }) => out.failed = true,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Langevin chain on the flattened network weights.
pub fn nn_chain(
    data: &NnDataset,
    d: usize,
    m: usize,
    alpha: f64,
    init: &DVector<f64>,
    chain: &LangevinConfig,
) -> Result<langevin::PredictionTrace> {
    let shape = MlpShape { d, m };
    let cache: RefCell<Option<(DVector<f64>, DVector<f64>)>> = RefCell::new(None);
    langevin::run_chain(
        |theta: &DVector<f64>| {
            if let Some((at, grad)) = cache.borrow_mut().take() {
                if &at == theta {
                    return grad;
                }
            }
            let mut grad = DVector::zeros(shape.param_count());
            shape.rho_and_grad(theta.as_slice(), data, alpha, grad.as_mut_slice());
            grad
        },
        |theta: &DVector<f64>| {
            let mut grad = DVector::zeros(shape.param_count());
            let mut preds = DVector::zeros(data.n());
            shape.rho_grad_predict(theta.as_slice(), data, alpha, grad.as_mut_slice(), Some(preds.as_mut_slice()));
            *cache.borrow_mut() = Some((theta.clone(), grad));
            preds
        },
        init,
        &data.y,
        data.sigma_sq,
        chain,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::nn(60);
        c.d = vec![2];
        c.m = vec![4];
        c.reps = 2;
        c.tilde_reps = 3;
        c.t = vec![20, 40];
        c
    }

    #[test]
    fn rows_cover_reps_and_lengths() {
        let run = run_nn(&tiny()).unwrap();
        assert_eq!(run.cells.len(), 2);
        assert_eq!(run.reps.len(), 2 * 3);
        let c = &run.cells[0];
        assert_eq!((c.t, c.p, c.tilde_count), (20, 16, 3));
        assert_eq!(c.lfv.unwrap().count, 2);
        assert!(run.reps.iter().filter(|r| r.rep == 2).all(|r| r.lfv.is_none() && r.tilde_mean.is_some()));
        assert_eq!(run.failed(), 0);
    }

    #[test]
    fn noiseless_tilde_has_no_sum_scale() {
        let mut c = tiny();
        c.sigma_sq = 0.0;
        c.estimators = [Estimator::Tilde].into_iter().collect();
        let run = run_nn(&c).unwrap();
        assert!(run.cells.iter().all(|c| c.tilde_sum.is_none() && c.tilde_mean.is_some() && c.lfv.is_none()));
    }

    #[test]
    fn fused_chain_matches_plain_closures() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data = make_nn_dataset(40, 3, 1.0, &mut rng).unwrap();
        let init = perturbed_init(3, 4, 0.1, &mut rng).unwrap().flatten();
        let cfg = LangevinConfig::new(1e-4, 40.0, 60, 0.1, 9).unwrap();
        let fused = nn_chain(&data, 3, 4, 1e-3, &init, &cfg).unwrap();
        let shape = MlpShape { d: 3, m: 4 };
        let plain = langevin::run_chain(
            |t: &DVector<f64>| {
                let mut g = DVector::zeros(shape.param_count());
                shape.rho_and_grad(t.as_slice(), &data, 1e-3, g.as_mut_slice());
                g
            },
            |t: &DVector<f64>| shape.predict(t.as_slice(), &data),
            &init,
            &data.y,
            1.0,
            &cfg,
        )
        .unwrap();
        assert_eq!(fused.to_matrix(), plain.to_matrix());
    }

    #[test]
    fn huge_step_reports_failures() {
        let mut c = tiny();
        c.step = 1e3;
        c.t = vec![200];
        let run = run_nn(&c).unwrap();
        assert_eq!(run.cells[0].failed, 2);
        assert!(run.cells[0].lfv.is_none());
        assert!(run.cells[0].tilde_mean.is_some());
    }
}
