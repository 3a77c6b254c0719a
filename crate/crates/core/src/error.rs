//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands whose shapes cannot be combined by the named operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Caller passed an argument outside an operation's documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced or encountered a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A domain invariant was violated (e.g. a parabola coefficient that is
    /// not strictly negative).
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
