//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by graph construction, model evaluation, sampling and the
/// simulation harness.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid geometry for area '{area_id}': {reason}")]
    InvalidGeometry { area_id: String, reason: String },

    #[error("graph structure error: {0}")]
    Graph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
