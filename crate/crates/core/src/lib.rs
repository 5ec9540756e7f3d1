//! Estimators of the Gibbs generalization gap for overparameterized ridge
//! regression and small neural networks.
//!
//! The crate computes the functional variance (FV) from exact quasi-posterior
//! samples, its Langevin approximation (LFV) from a discretized Langevin
//! chain, and the TIC/RIC baselines. Closed-form hat-matrix identities are
//! provided alongside so the Monte-Carlo estimators can be checked against
//! exact values.
//!
//! Modules:
//! - [`linmodel`]: SVD, ridge MAP fit, hat spectrum, low-rank posterior sampler.
//! - [`estimators`]: gap, E[FV], J-FV, FV, TIC and RIC.
//! - [`langevin`]: Langevin chain and LFV.
//! - [`nn`]: one-hidden-layer tanh network with analytic gradients.
//! - [`synthetic`]: Haar factors, singular-value profiles, dataset generators.
//! - [`oracle`]: dense brute-force references used by tests and the self-check.
//! - [`harness`]: replication runner, table output and the self-check suite.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod langevin;
pub mod linmodel;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
