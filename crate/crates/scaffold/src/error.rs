use std::path::Path;

/// Failures surfaced to the command line, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        AppError::Data(format!("{}: {err}", path.display()))
    }

    pub fn at_line(path: &Path, line: usize, msg: impl std::fmt::Display) -> Self {
        AppError::Data(format!("{}:{line}: {msg}", path.display()))
    }
}

impl From<scaffold_core::Error> for AppError {
    fn from(e: scaffold_core::Error) -> Self {
        if e.is_numerical() {
            AppError::Numerical(e.to_string())
        } else {
            AppError::Data(e.to_string())
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
