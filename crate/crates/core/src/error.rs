use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CcdError>;

#[derive(Debug, Error)]
pub enum CcdError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("training aborted in {step}: {reason} (last good checkpoint: {checkpoint})")]
    TrainingAborted {
        step: String,
        reason: String,
        checkpoint: String,
    },

    #[error("incomplete input: {0}")]
    Incomplete(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl CcdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CcdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Maps a csv error on `path`, keeping I/O failures as [`CcdError::Io`].
    pub fn csv(path: &std::path::Path, e: csv::Error) -> Self {
        if e.is_io_error() {
            if let csv::ErrorKind::Io(source) = e.into_kind() {
                return CcdError::io(path, source);
            }
            unreachable!("is_io_error implies an Io kind");
        }
        CcdError::Parse(format!("{}: {e}", path.display()))
    }

    pub fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        CcdError::Dimension {
            context,
            expected,
            got,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CcdError::Config(_) | CcdError::Dimension { .. } | CcdError::Parse(_) => 1,
            CcdError::Numeric(_) | CcdError::Solver(_) | CcdError::TrainingAborted { .. } => 2,
            CcdError::Incomplete(_) | CcdError::Io { .. } => 3,
        }
    }
}

impl From<serde_json::Error> for CcdError {
    fn from(e: serde_json::Error) -> Self {
        CcdError::Parse(e.to_string())
    }
}

impl From<csv::Error> for CcdError {
    fn from(e: csv::Error) -> Self {
        CcdError::Parse(e.to_string())
    }
}
