use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("invalid layer spec at layer {layer} ({name}): {msg}")]
    InvalidSpec {
        layer: usize,
        name: String,
        msg: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported image format: {0}")]
    Format(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Divergence {
        epoch: usize,
        batch: usize,
        msg: String,
    },
    #[error("missing files referenced by manifest: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end:
    /// 1 usage/config, 2 runtime divergence, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) => 2,
            Error::Io { .. }
            | Error::MissingFiles(_)
            | Error::CorruptCheckpoint(_)
            | Error::UnsupportedVersion { .. }
            | Error::Format(_) => 3,
            _ => 1,
        }
    }
}
