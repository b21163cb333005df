use thiserror::Error;

pub type Result<T> = std::result::Result<T, HomError>;

#[derive(Debug, Error)]
pub enum HomError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Probability pushed above the per-mode photon-number cutoff.
    #[error("truncation leakage {leaked:.3e} exceeds {threshold:.1e}; increase n_max")]
    TruncationLeak { leaked: f64, threshold: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("maximum-likelihood iteration did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("occupied bin has zero model probability; the cutoff is probably too small")]
    ZeroProbabilityBin,

    #[error("no threshold crossing: {0}")]
    NoCrossing(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl HomError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        HomError::InvalidParameter(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        HomError::InvalidState(msg.into())
    }
}
