use thiserror::Error;

/// Errors raised by mesh generation, assembly, solving and the study driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("problem has no exact solution attached")]
    MissingExactSolution,

    #[error("coercivity violated: b - div(a)/2 = {value:.3e} at ({x:.4}, {y:.4})")]
    Coercivity { value: f64, x: f64, y: f64 },

    #[error("non-finite coefficient value at ({x:.6}, {y:.6})")]
    NonFinite { x: f64, y: f64 },

    #[error("numerically singular matrix: {0}")]
    Singular(String),

    #[error("point ({x}, {y}) lies outside the unit square")]
    OutOfDomain { x: f64, y: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
