//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by field loading, model fitting, planning and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated a precondition or type invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Text input (grid ASCII or dataset CSV) could not be parsed.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A linear-algebra operation failed beyond what the jitter ladder
    /// can repair.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Path planning could not satisfy its contract (e.g. an unreachable
    /// waypoint).
    #[error("planning failed: {0}")]
    Planning(String),

    /// A search exceeded its resource budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// File I/O failure, tagged with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
