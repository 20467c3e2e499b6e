//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("gradient coordinates {coords:?} are below {threshold:e} in magnitude")]
    DegenerateGradient { coords: Vec<usize>, threshold: f64 },

    #[error(
        "exact enumeration refused for N = {n} (limit {limit}); use the Monte Carlo estimator"
    )]
    TooLargeForEnumeration { n: usize, limit: usize },

    #[error("unsupported moment shape: {0}")]
    UnsupportedMoment(String),

    #[error("trajectory diverged at step {step} (|theta| = {magnitude:e})")]
    Diverged { step: usize, magnitude: f64 },

    #[error("gradient norm {norm:e} is too small for a noise scale")]
    VanishingGradient { norm: f64 },

    #[error("noise ladder leaves the gradient-dominated region: ratio {ratio:.3} exceeds {limit}")]
    OutsideExpansionRegion { ratio: f64, limit: f64 },
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}
