use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The bytes on disk do not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A value violates a documented invariant (non-finite pixels, bad labels, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown band `{0}`")]
    UnknownBand(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size {tau} exceeds the convergence bound {bound} (2/|A|^2)")]
    StepSize { tau: f64, bound: f64 },

    #[error("resource `{path}`: {reason}")]
    Resource { path: PathBuf, reason: String },

    #[error("model signature mismatch: {0}")]
    Signature(String),

    #[error("denoiser failed at iteration {iteration}: {source}")]
    Denoiser {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("inference error: {0}")]
    Inference(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
