use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value encountered at {location}")]
    NonFinite { location: String },

    #[error("integral did not converge: {0}")]
    Divergence(String),

    #[error("unsupported parameters: {0}")]
    Unsupported(String),

    #[error("step size too large at u = {u}: diagonal factor {factor:e}; increase the grid size")]
    StepSize { u: f64, factor: f64 },

    #[error("degenerate barrier decomposition: h'(b) = {0:e}")]
    DegenerateDecomposition(f64),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
