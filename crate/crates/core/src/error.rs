use thiserror::Error;

/// Errors raised by the distance, transport and clustering routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    InvalidMatrix(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("sample size mismatch: {0} vs {1}")]
    Size(usize, usize),

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("cost matrix contains a non-finite entry at ({0}, {1})")]
    InvalidCost(usize, usize),

    #[error("trimming level must lie in [0, 0.5), got {0}")]
    InvalidTrim(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("cannot draw a subsample of {requested} points from {available}")]
    Subsample { requested: usize, available: usize },

    #[error("transforms were built against different reference measures")]
    ReferenceMismatch,

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
