use thiserror::Error;

use crate::hgroup::GroupPoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("estimation failed: {reason}")]
    Estimation {
        reason: String,
        pair: Option<Box<(GroupPoint, GroupPoint)>>,
    },

    #[error("degenerate denominator: estimate {value:e} is not above 3 standard errors ({stderr:e})")]
    DegenerateDenominator { value: f64, stderr: f64 },

    #[error("integral diverges: {0}")]
    Divergence(String),

    #[error("under-resolved domain: {0}")]
    UnderResolved(String),

    #[error("non-finite kernel entry for pair ({i}, {j}): {value}")]
    Assembly { i: usize, j: usize, value: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<Vec<f64>>>,
    },

    #[error("stagnation after {iterations} iterations (residual {residual:e})")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("insufficient signal in row {row}: |value| {value:e} < 2 * stderr {stderr:e}")]
    InsufficientSignal { row: usize, value: f64, stderr: f64 },

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
