//! Crate-wide error type. Variants map onto CLI exit-code categories:
//! configuration/parameter misuse, data/format problems, and numeric failures.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range (expected 0..{n_classes})")]
    InvalidLabel { label: u8, n_classes: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("RDP order must exceed 1, got {0}")]
    InvalidOrder(f64),

    #[error("unsupported RDP order {0}: the subsampled bound needs an integer order >= 2")]
    UnsupportedOrder(f64),

    #[error("RDP order grids differ: {0}")]
    GridMismatch(String),

    #[error("matrix is not positive semidefinite: eigenvalue {0}")]
    NotPsd(f64),

    #[error("{path}: {message} at byte {offset}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("audit violation: Renyi divergence {divergence} exceeds bound {bound}")]
    AuditViolation { divergence: f64, bound: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid_parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
