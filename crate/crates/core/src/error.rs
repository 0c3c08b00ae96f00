use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PincError>;

#[derive(Debug, Error)]
pub enum PincError {
    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),

    #[error("integration produced a non-finite state (dt = {dt}, substeps = {substeps})")]
    NonFiniteState { dt: f64, substeps: usize },

    #[error("cannot recover yaw from a zero (cos, sin) pair")]
    DegenerateYaw,

    #[error("non-finite value in {location}")]
    NonFinite { location: String },

    #[error("rollout produced a non-finite state at step {step}")]
    RolloutDiverged { step: usize },

    #[error("non-finite {what} for loss `{loss}`")]
    NonFiniteLoss { loss: &'static str, what: &'static str },

    #[error("gradient length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("degenerate gradient combination: {0}")]
    DegenerateGradient(String),

    #[error("invalid configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("incompatible datasets: {0}")]
    Incompatible(String),

    #[error("checkpoint does not match its configuration: {0}")]
    CheckpointShape(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<PincError>,
    },

    #[error("output directory {0} is not empty (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("malformed file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PincError {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        PincError::Config { key: key.into(), reason: reason.into() }
    }

    /// True for failures caused by numerics rather than user input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            PincError::NonFiniteState { .. }
                | PincError::NonFinite { .. }
                | PincError::RolloutDiverged { .. }
                | PincError::NonFiniteLoss { .. }
                | PincError::DegenerateGradient(_)
                | PincError::TrainingDiverged { .. }
        )
    }
}
