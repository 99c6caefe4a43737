use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not fit the operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// A value violates a documented domain constraint (even `k`, non-binary mask, ...).
    #[error("validation error: {0}")]
    Validation(String),
    /// Caller broke an API contract, e.g. a non-scalar loss handed to the gradient evaluator.
    #[error("contract error: {0}")]
    Contract(String),
    /// Malformed tensor container, bundle or graymap.
    #[error("format error: {0}")]
    Format(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
