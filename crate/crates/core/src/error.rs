//! Error type shared by every module of the engine.

use thiserror::Error;

/// Residual left in one calibration bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketResidual {
    pub maturity: f64,
    pub gamma: f64,
    /// Relative repricing error (model − market) / market.
    pub residual: f64,
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("time ordering violated: expected {start} <= {end}")]
    Ordering { start: f64, end: f64 },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("calibration failed in bucket {bucket} (maturity {maturity}): residual {residual:e}")]
    Calibration {
        bucket: usize,
        maturity: f64,
        residual: f64,
        solved: Vec<BucketResidual>,
    },

    #[error("numerical failure: {what} (achieved tolerance {achieved:e})")]
    Numerical { what: String, achieved: f64 },

    #[error("fixed-point iteration diverged at iteration {iteration}: residual {residual:e}")]
    Divergence { iteration: usize, residual: f64 },

    #[error("singular hedge: {0}")]
    SingularHedge(String),

    #[error("time step too large: |gamma|*dt = {ratio:e} exceeds {limit:e}; refine the time grid")]
    StepTooLarge { ratio: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_order(start: f64, end: f64) -> Result<()> {
    if start <= end {
        Ok(())
    } else {
        Err(Error::Ordering { start, end })
    }
}
