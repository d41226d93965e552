use std::io;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A file does not match its expected binary layout.
    #[error("format error: {0}")]
    Format(String),
    /// An input violates an invariant (shape mismatch, bad label, non-finite value).
    #[error("validation error: {0}")]
    Validation(String),
    /// A configuration cannot be satisfied by the data it was applied to.
    #[error("configuration error: {0}")]
    Config(String),
    /// A numeric failure such as a non-finite loss or gradient.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
