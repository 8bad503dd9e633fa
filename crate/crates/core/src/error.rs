use thiserror::Error;

/// Errors produced by graph construction, cost evaluation, solvers and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph construction failed: {0}")]
    GraphConstruction(String),

    #[error("invalid consensus matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations: {context}")]
    NoConvergence { iterations: usize, context: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that stem from user-supplied configuration rather
    /// than from a solver or simulation failure at runtime.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidGraph(_)
                | Error::InvalidMatrix(_)
                | Error::InvalidConfig(_)
                | Error::DimensionMismatch(_)
                | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
