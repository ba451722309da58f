use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical degeneracy in series `{series}`: {detail}")]
    Degenerate { series: String, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}; loss trace: {trace:?}")]
    TrainingDiverged { epoch: usize, trace: Vec<f64> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }
}
