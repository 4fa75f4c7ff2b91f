use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid nodes {i} and {j} coincide")]
    DuplicateNodes { i: usize, j: usize },

    #[error("query point {value} lies outside [-1, 1]; extrapolation is not supported")]
    OutOfDomain { value: f64 },

    #[error("{what} is not supported on a {grid} grid: {reason}")]
    UnsupportedGrid {
        what: &'static str,
        grid: String,
        reason: &'static str,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("linear system is singular (estimated condition number {cond:e})")]
    SingularSystem { cond: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
