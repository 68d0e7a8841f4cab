use thiserror::Error;

/// Errors produced by the analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty document")]
    EmptyDocument,
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend does not support {0}")]
    UnsupportedCapability(&'static str),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("coordinate ({x}, {y}) outside [0, 2]")]
    Range { x: f64, y: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("ablation removed every source sentence")]
    EmptySource,
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
