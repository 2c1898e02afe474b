use thiserror::Error;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("timestep {0} outside [0, 1]")]
    TimestepRange(f64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AutodiffError::Shape { op, detail: detail.into() }
    }
}
