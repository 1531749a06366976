use num_complex::Complex64;
use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("pole at z = {z}")]
    PoleAtPoint { z: Complex64 },

    #[error("non-finite value at z = {z}")]
    NonFinite { z: Complex64 },

    #[error("bad parameter: {0}")]
    BadParameter(String),

    #[error("parse error at byte {position}: expected {expected}, found {found:?}")]
    ParseError {
        position: usize,
        expected: String,
        found: String,
    },

    #[error("tolerance {tol:e} not met (reached {achieved:e})")]
    ToleranceNotMet { tol: f64, achieved: f64 },

    #[error("cell budget of {budget} exhausted")]
    BudgetExceeded { budget: usize },

    #[error("|f - w| = {min_distance:e} on the contour, below threshold")]
    ValueOnContour { min_distance: f64 },

    #[error("winding integral {value} is not an integer (residual {residual:e})")]
    NonIntegerResult { value: f64, residual: f64 },

    #[error("component occupies only {cells} grid cells")]
    ResolutionTooCoarse { cells: usize },

    #[error("map is not univalent: multiplicity {multiplicity} at w = {w}")]
    NotUnivalent { w: Complex64, multiplicity: i64 },

    #[error("uncovered radius measure {uncovered:e} exceeds {allowed:e}")]
    CoverageGap { uncovered: f64, allowed: f64 },

    #[error("lift start is off the circle (fidelity {fidelity:e})")]
    StartOffCurve { fidelity: f64 },

    #[error("lift did not reach the boundary ({reason})")]
    IncompleteLift { reason: String },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("sampled length {length:e} below 1e-9")]
    ZeroLength { length: f64 },

    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
