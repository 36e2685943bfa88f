use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("no kernel support near t = {t}")]
    NoSupport { t: f64 },

    #[error("too many degenerate points: {degenerate} of {total} ({context})")]
    TooManyDegenerate {
        degenerate: usize,
        total: usize,
        context: &'static str,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("perfect separation detected in propensity fit")]
    Separation,

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("near-flat crossing at z = {z}: |Q'(z)| = {slope:e}")]
    FlatCrossing { z: f64, slope: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
