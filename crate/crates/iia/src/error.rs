//! Error type shared by the attribution engine, metrics, and IO paths.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// The integrand produced NaN or infinity at a specific grid point.
    #[error("non-finite {what} at layer {layer}, coefficients {coefficients:?}")]
    NonFinite {
        what: String,
        layer: usize,
        coefficients: Vec<f64>,
    },

    #[error("numeric guard: {0}")]
    Numeric(String),

    #[error("missing cost entry for segment {0}")]
    MissingCost(String),

    #[error("training budget exhausted: {0}")]
    TrainingBudget(String),

    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error(transparent)]
    Model(#[from] iia_models::ModelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl AttributionError {
    pub fn shape(context: &str, expected: &[usize], got: &[usize]) -> Self {
        AttributionError::ShapeMismatch {
            context: context.to_string(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AttributionError>;
