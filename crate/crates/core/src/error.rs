use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Axis lengths or tensor ranks do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An input violates a documented precondition (not a density matrix,
    /// wrong element count, out-of-range parameter, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// A numerical kernel failed (non-convergence, non-finite values,
    /// positivity violated beyond tolerance).
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// The request exceeds what the dense reference path supports.
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// A container file is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
