//! Experiment runner behind the `gapfv` binary.

pub mod config;
pub mod linear;
pub mod network;
pub mod output;
pub mod selfcheck;

pub use config::{ConfigOverrides, Estimator, ExperimentConfig, Mode};
pub use linear::{run_linear, LinearRun, LinearSummary};
pub use network::{run_nn, NnCell, NnRepRow, NnRun};
pub use selfcheck::{run_selfcheck, CheckResult, SelfcheckOptions, SelfcheckReport};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Maps `f` over `0..count` on a bounded pool; output is in index order
/// whatever the schedule.
pub(crate) fn par_map<T, F>(threads: Option<usize>, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let work = || (0..count).into_par_iter().map(&f).collect::<Vec<T>>();
    match threads {
        None => Ok(work()),
        Some(1) => Ok((0..count).map(&f).collect()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config {
                    field: "threads",
                    reason: e.to_string(),
                })?;
            Ok(pool.install(work))
        }
    }
}
