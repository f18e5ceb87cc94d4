use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid video volume: {0}")]
    InvalidVolume(String),

    #[error("parameter file: {0}")]
    ParamFile(String),

    #[error("sigma^2 must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("blur kernel `{0}` cannot be normalized")]
    BlurKernel(&'static str),

    #[error("input of {have} frames is shorter than the {need}-frame temporal kernel")]
    TooShort { have: usize, need: usize },

    #[error("expected a window of {expected} frames, got {actual}")]
    WindowLength { expected: usize, actual: usize },

    #[error("pyramid of {levels} levels needs spatial dims >= {min}, got {height}x{width}")]
    TooManyLevels {
        levels: usize,
        min: usize,
        height: usize,
        width: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("channel norm input must be non-negative, found {0}")]
    NegativeInput(f64),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad .flo magic {0}")]
    BadMagic(f32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("non-positive dimensions {width}x{height}")]
    BadDims { width: i64, height: i64 },

    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("{0}")]
    Format(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
