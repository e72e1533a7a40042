use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum CareError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("annotation for image `{image_id}`: {message}")]
    Annotation { image_id: String, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CareError {
    /// True for errors caused by user-supplied configuration or input data,
    /// as opposed to I/O or internal failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            CareError::Config(_)
                | CareError::Argument(_)
                | CareError::Parse { .. }
                | CareError::Annotation { .. }
                | CareError::Checkpoint(_)
                | CareError::Metric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, CareError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CareError::Config(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CareError::Argument(msg.into()))
}
