use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quadrature did not converge: estimate {value:e}, error estimate {error:e}")]
    QuadratureNonConvergence { value: f64, error: f64 },

    #[error(
        "linear solver stalled after {iterations} iterations with relative residual {residual:e}"
    )]
    SolverNonConvergence { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {row})")]
    NotPositiveDefinite { row: usize },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("scale {mu:e} is below {min_cells} boundary cells of size {cell:e}")]
    ScaleBelowGrid {
        mu: f64,
        cell: f64,
        min_cells: usize,
    },

    #[error("no concentration: full-box mass {mass:e} below selection level {level:e}")]
    NoConcentration { mass: f64, level: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
