use thiserror::Error;

/// Errors raised by the clearing library.
#[derive(Debug, Error)]
pub enum ClearError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unbounded: {0}")]
    Unbounded(String),
    #[error("singular system (condition estimate {cond:.3e})")]
    Singular { cond: f64 },
    #[error("matrix is not positive semidefinite: {0}")]
    NotPositiveDefinite(String),
    #[error("solver stalled: {0}")]
    Stalled(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ClearError>;
