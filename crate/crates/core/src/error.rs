//! Error types shared by every module in the crate.
//!
//! Library code never panics on bad input; it returns [`CoreError`] and lets
//! the caller decide. The CLI maps error kinds onto process exit codes, so
//! each variant carries enough context to be printed as a single line.

use crate::numerics::Shape;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    /// Two tensors (or a tensor and an expected layout) disagree in shape.
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },

    /// An input value is outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A file could not be parsed; reported with path and 1-based line number.
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    /// A lookup used an id or name that the target store does not contain.
    #[error("unknown {kind}: {id}")]
    Unknown { kind: &'static str, id: String },

    /// Bad configuration (invalid value, conflicting options, unknown keys).
    #[error("config error: {0}")]
    Config(String),

    /// A numeric computation produced a non-finite value or failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    /// Helper for wrapping an io error with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CoreError::Numeric(msg.into())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
