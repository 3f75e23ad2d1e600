use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FaError>;

/// Coarse classification used by callers that need to map errors onto exit
/// codes or retry policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidInput,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum FaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A retained eigenvalue of the rescaled covariance does not exceed 1, so
    /// `(omega - 1)^(1/2)` is undefined.
    #[error("eigenvalue deficit: retained eigenvalue {index} is {eigenvalue} (must exceed 1); k may be too large for the data")]
    EigenvalueDeficit { index: usize, eigenvalue: f64 },

    #[error("rank anomaly: only {positive} positive singular values but k = {k} (rank bound {rank_bound})")]
    RankAnomaly {
        positive: usize,
        k: usize,
        rank_bound: usize,
    },

    #[error("degenerate factor {index}: omega = {omega} (must exceed 1)")]
    DegenerateFactor { index: usize, omega: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FaError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            FaError::InvalidInput(_) => ErrorKind::InvalidInput,
            FaError::Numerical(_) => ErrorKind::Numerical,
            FaError::Domain(_)
            | FaError::EigenvalueDeficit { .. }
            | FaError::RankAnomaly { .. }
            | FaError::DegenerateFactor { .. }
            | FaError::Parse { .. }
            | FaError::Version { .. }
            | FaError::Io { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FaError::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        FaError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FaError::Io {
            path: path.into(),
            source,
        }
    }
}
