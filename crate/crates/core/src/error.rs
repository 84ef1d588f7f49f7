use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("architecture error in block `{block}`: {message}")]
    Spec { block: String, message: String },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short identifier used by the command line front-end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::EmptyInput(_) => "empty-input",
            Error::Spec { .. } => "spec-error",
            Error::TrainingDiverged(_) => "training-diverged",
            Error::Checkpoint(_) => "checkpoint-error",
            Error::Generation(_) => "generation-error",
            Error::Io { .. } => "io-error",
            Error::Codec(_) => "codec-error",
            Error::Json(_) => "json-error",
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Codec(e.to_string())
    }
}

impl From<tiff::TiffError> for Error {
    fn from(e: tiff::TiffError) -> Self {
        Error::Codec(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
