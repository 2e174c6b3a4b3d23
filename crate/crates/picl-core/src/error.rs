use std::path::PathBuf;
use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, PiclError>;

/// Errors emitted by the engine.
#[derive(Debug, Error)]
pub enum PiclError {
    /// An input that is mathematically degenerate for the requested
    /// operation (zero-norm vector, empty point set, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Operand shapes are incompatible.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A caller violated an operation contract (bad index, dangling
    /// reference, empty cluster, ...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced non-finite values.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// A command prerequisite (checkpoint, dataset file) is missing.
    #[error("missing artifact: {path} ({hint})")]
    MissingArtifact { path: PathBuf, hint: String },

    /// Malformed checkpoint container.
    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    /// Malformed text file (dataset, trials, config).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
