use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The design must be passed with n <= p; it is never transposed implicitly.
    #[error("design has n = {n} rows and p = {p} columns; expected n <= p")]
    Orientation { n: usize, p: usize },

    #[error("estimator unavailable: {0}")]
    EstimatorUnavailable(&'static str),

    #[error("need at least 2 samples, got {got}")]
    InsufficientSamples { got: usize },

    #[error("non-finite state at step {step}")]
    Divergence { step: usize },

    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
}
