use thiserror::Error;

/// Errors produced by the geometry, proximal, subproblem and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate retraction: {0}")]
    DegenerateRetraction(String),

    #[error("unsupported composition: {0}")]
    UnsupportedComposition(String),

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("subproblem failed: residual {residual:.3e} after {iterations} iterations")]
    SubproblemFailure { residual: f64, iterations: usize },

    #[error("insufficient trace data: {0}")]
    InsufficientData(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
