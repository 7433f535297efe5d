use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented range; names the offending field.
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParameter { field: String, message: String },

    /// Lookup of an image id that does not exist in the dataset.
    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    /// Mask query against a dataset without masks.
    #[error("dataset `{0}` carries no masks (not a segmentation dataset)")]
    NoMask(String),

    /// Tensor/grid shape does not match what the operation expects.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// Training loss became non-finite; carries per-layer weight norms for
    /// diagnostics.
    #[error("training diverged at epoch {epoch}: non-finite loss (layer weight norms: {norms:?})")]
    Diverged { epoch: usize, norms: Vec<f64> },

    /// NaN found in a feature matrix handed to ranking.
    #[error("NaN in feature matrix at sample `{sample}`, feature `{feature}`")]
    NanFeature { sample: String, feature: String },

    /// A metric is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A strategy was invoked without the context it requires.
    #[error("configuration error: {0}")]
    Config(String),

    /// Requested operation is unsupported for this model.
    #[error("unsupported method: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file `{path}`: {message}")]
    Malformed { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
