use thiserror::Error;

/// Errors produced anywhere in the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {index} ({name}): {reason}")]
    Layer {
        index: usize,
        name: String,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid label {0}: labels must be 0 or 1")]
    Label(u8),

    #[error("need at least one positive and one negative example ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },

    #[error("non-finite gradient in layer {layer}")]
    NonFinite { layer: usize },

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;
