use thiserror::Error;

/// Errors raised by the affordance library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action {action}: {reason}")]
    InvalidAction { action: String, reason: &'static str },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("no valid pixels in mask")]
    NoValidPixels,

    #[error("head index {index} out of range for an ensemble of {heads}")]
    HeadOutOfRange { index: usize, heads: usize },

    #[error("prior weights must be non-negative and sum to 1 (sum = {sum})")]
    UnnormalizedPrior { sum: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("could not place {objects} object(s) after {attempts} attempts")]
    Placement { objects: usize, attempts: usize },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
