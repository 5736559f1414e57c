//! Crate-wide error type.
//!
//! The variants mirror how callers should react rather than where the error
//! came from: `InvalidInput` and `Config` are caller bugs, `DegenerateInput`
//! flags mathematically meaningless requests (e.g. orthogonalizing the zero
//! matrix), `NumericFailure` is an honest "the iteration did not converge",
//! and `Contract` marks API misuse such as reusing a stale forward cache.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a precondition (non-finite entries, shape mismatch, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input is structurally valid but the operation is undefined on it.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// An iterative routine failed to converge within its budget.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API contract was violated (stale cache, mismatched state, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
