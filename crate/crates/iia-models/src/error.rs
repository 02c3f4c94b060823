//! Error type shared by every model operation.

/// Errors raised while building, running, or mutating a model.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("layer index {layer} out of range, this model taps layers 0..={max}")]
    LayerOutOfRange { layer: usize, max: usize },

    #[error("run protocol violation: {0}")]
    Protocol(String),

    #[error("unknown model id '{0}'")]
    UnknownModel(String),

    #[error("unsupported for this architecture: {0}")]
    Unsupported(String),

    #[error("weights file problem: {0}")]
    Weights(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ModelError {
    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        ModelError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
