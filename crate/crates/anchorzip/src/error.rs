use std::fmt;
use std::path::PathBuf;

use anchorzip_core::Error as CoreError;

/// Where in an input file a parse error happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Offset(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at {location}: {reason}")]
    Parse { location: Location, reason: String },
    #[error("profile: {0}")]
    Profile(String),
    #[error("{0}")]
    Usage(String),
    #[error("selftest failed: {0}")]
    Selftest(String),
    #[error(transparent)]
    Codec(#[from] CoreError),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn parse(location: Location, reason: impl Into<String>) -> Self {
        AppError::Parse { location, reason: reason.into() }
    }

    /// Process exit status: 2 for invalid input, 3 for a corrupt stream,
    /// 4 for a failed selftest, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Io { .. } => 1,
            AppError::Parse { .. } | AppError::Profile(_) | AppError::Usage(_) => 2,
            AppError::Selftest(_) => 4,
            AppError::Codec(e) => match e.root() {
                CoreError::CorruptStream { .. } | CoreError::ModelMismatch { .. } => 3,
                CoreError::SelfCheck(_) | CoreError::NonFinite(_) => 1,
                _ => 2,
            },
        }
    }
}
