use std::path::PathBuf;

/// Every failure the engine can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(f64),

    #[error("backward called without a recorded forward pass: {0}")]
    MissingGraph(String),

    #[error("parameter has no gradient buffer")]
    MissingGradient,

    #[error("invalid action {0}: expected 0 or 1")]
    InvalidAction(usize),

    #[error("episode exhausted after {n_steps} steps")]
    EpisodeExhausted { n_steps: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("head mismatch: expected {expected}, network has {actual}")]
    HeadMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("replay memory holds {have} transitions, {need} requested")]
    InsufficientMemory { have: usize, need: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("failed to ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("checkpoint checksum error: {0}")]
    Checksum(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
