use thiserror::Error;

/// Errors raised by the identification and compensation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sample {index} ({value}) leaves the admissible domain [{lo}, {hi}] of the model")]
    OutOfDomain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("bin {bin} has a zero or invalid noise estimate inside the integration run")]
    UnexcitedBin { bin: usize },

    #[error("valid bins are not contiguous (gap at bin {bin})")]
    NonContiguous { bin: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
