use thiserror::Error;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid value for `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("modality augmentation unavailable: client has {available} modality(ies)")]
    AugmentationUnavailable { available: usize },

    #[error("malformed input at {location}: {message}")]
    Malformed { location: String, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

impl SimError {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        SimError::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
