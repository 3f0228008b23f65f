use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {what}")]
    NonFinite { step: u64, what: String },

    #[error("matrix square root failed: {0}")]
    MatrixSqrt(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short, stable name of the failure class, used for CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Io { .. } => "missing-file",
            Error::Image(_) => "image",
            Error::Shape(_) => "shape-mismatch",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Config(_) => "bad-config",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFinite { .. } => "non-finite-loss",
            Error::MatrixSqrt(_) => "matrix-sqrt",
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(format!($($arg)*)) };
}

pub(crate) use invalid;
pub(crate) use shape_err;
