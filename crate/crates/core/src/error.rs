use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("degenerate pose problem: {found} correspondences, need at least {needed}")]
    DegenerateProblem { found: usize, needed: usize },

    #[error("size mismatch: expected {expected:?}, got {found:?}")]
    SizeMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("missing required file {0}")]
    MissingFile(PathBuf),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported image format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("tracking never initialized")]
    NotInitialized,

    #[error("image error in {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("io error on {path}: {source}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
