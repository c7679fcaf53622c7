use std::path::PathBuf;

use thiserror::Error;

/// Top-level failure classes; each maps to a process exit code.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}:{line}: {message}")]
    DataAt { path: PathBuf, line: usize, message: String },
    #[error("{stage} failed: {message}")]
    Runtime { stage: &'static str, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) | AppError::DataAt { .. } => 3,
            AppError::Runtime { .. } | AppError::Io { .. } => 4,
        }
    }

    pub fn runtime(stage: &'static str, e: impl std::fmt::Display) -> AppError {
        AppError::Runtime { stage, message: e.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> AppError {
        AppError::Io { path: path.into(), source }
    }
}
