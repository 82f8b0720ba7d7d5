//! Crate-wide error type.

/// Errors produced by mesh construction, quadrature, assembly, and the
/// experiment driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A quadrature rule could not be constructed or did not converge.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// The assembled system is not symmetric positive definite, or the
    /// solve did not meet its accuracy contract.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Energy-sequence extrapolation could not produce a trustworthy value.
    #[error("extrapolation failed: {0}")]
    Extrapolation(String),

    /// Text parsing (config files, CSV) failed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
