use thiserror::Error;

pub type Result<T, E = KidError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KidError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite activation at layer {layer} ({stage})")]
    NonFinite { layer: usize, stage: &'static str },

    #[error("non-finite loss component `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("degenerate forgery: {0}")]
    DegenerateForgery(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
