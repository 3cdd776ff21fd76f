use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("index {index} out of range {lo}..={hi}")]
    Index { index: usize, lo: usize, hi: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error line and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Param(_) => "param",
            Error::Index { .. } => "index",
            Error::NonFinite(_) => "non_finite",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Transport(_) => "transport",
            Error::Generation(_) => "generation",
            Error::Precondition(_) => "precondition",
            Error::Io { .. } => "io",
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Param(_))
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
