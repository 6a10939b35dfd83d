use thiserror::Error;

/// Errors raised by the engine's in-memory operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaserError {
    #[error("{what} index {index} out of range (limit {limit})")]
    Range {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid trace: {0}")]
    Validation(String),
    #[error("invalid attention at layer {layer}, head {head}: {reason}")]
    AttentionRow {
        layer: usize,
        head: usize,
        reason: String,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = LaserError> = std::result::Result<T, E>;
