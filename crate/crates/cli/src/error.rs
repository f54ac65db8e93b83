use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("{op}: {source}")]
    Numerical {
        op: &'static str,
        #[source]
        source: vorwave_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::Validation { .. } => 1,
            Self::Numerical { source, .. } => match source {
                vorwave_core::Error::Invalid(_) | vorwave_core::Error::NotAdmissible(_) => 1,
                _ => 2,
            },
            Self::Io { .. } => 3,
        }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Tags a core error with the operation that raised it.
pub trait Context<T> {
    fn op(self, op: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for vorwave_core::Result<T> {
    fn op(self, op: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Numerical { op, source })
    }
}
