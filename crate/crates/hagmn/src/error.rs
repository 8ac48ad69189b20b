use std::path::{Path, PathBuf};

/// Errors from file handling and the pipeline commands.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hagmn_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    /// 2 for invalid input or configuration, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use hagmn_core::Error as Core;
        match self {
            Self::Json { .. } | Self::Format { .. } | Self::Usage(_) => 2,
            Self::Io { .. } => 1,
            Self::Core(e) => match e {
                Core::Diverged { .. } | Core::NonFinite(_) | Core::StaleReference | Core::NonScalarLoss { .. } => 1,
                _ => 2,
            },
        }
    }
}
