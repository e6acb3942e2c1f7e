use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LsrError {
    /// Bad invocation: missing or unreadable input, malformed config.
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] lsr_core::error::Error),
}

impl LsrError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    /// Process exit code: 2 for usage and input-shape problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Parse { .. } => 2,
            Self::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, LsrError>;
