//! Error type shared across the library.
//!
//! The CLI maps these variants onto exit codes, so the split matters:
//! validation-style problems (shape, contract, index, schedule, validation,
//! format) are user-input errors, `Numeric` means a loss went non-finite
//! mid-training, and `Io` wraps filesystem failures.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Matrix or network dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An index (label, class id, row) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A loss or parameter became NaN/Inf; the message names the loss.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A binary container is malformed (bad magic, truncation, non-finite payload).
    #[error("format error: {0}")]
    Format(String),

    /// Dataset or config validation failed; names the offending field.
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    /// A task schedule violates the setting's structural rules.
    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), message: message.into() }
    }

    pub fn schedule(msg: impl Into<String>) -> Self {
        Error::Schedule(msg.into())
    }
}
