use std::path::PathBuf;

use thiserror::Error;
use tokenflow_autodiff::AutodiffError;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame dimension {0} must be even")]
    OddDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("sequence of {len} positions exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("symbol {symbol} outside vocabulary of {vocab}")]
    Symbol { symbol: usize, vocab: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("negative prior variance {0}")]
    NegativeVariance(f64),

    #[error("time {0} outside [0, 1]")]
    TimeRange(f64),

    #[error("number of function evaluations must be at least 1")]
    ZeroNfe,

    #[error("generation session already terminated")]
    SessionFinished,

    #[error("non-finite loss at step {step}; last good checkpoint: {last_good}")]
    NonFiniteLoss { step: u64, last_good: String },

    #[error("{path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    /// True for failures caused by NaN or infinite values.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            CoreError::NonFiniteLoss { .. }
                | CoreError::Autodiff(AutodiffError::NonFinite { .. })
                | CoreError::Autodiff(AutodiffError::NonFiniteGradient { .. })
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, CoreError::Io(_) | CoreError::Load { .. } | CoreError::Autodiff(AutodiffError::Io(_)))
    }
}
