use std::path::PathBuf;

/// Errors produced by every pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: missing required field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Data(String),

    #[error("referential integrity violation: {0}")]
    Reference(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("syntax hook failed: {0}")]
    SyntaxHook(String),

    #[error("embedding interrupted after {completed} of {total} rows: {message}")]
    EmbedInterrupted {
        completed: usize,
        total: usize,
        message: String,
    },

    #[error(
        "pool for query `{query_id}` holds {available} negatives but {requested} were requested; \
         raise the pool size or lower the per-item negative count"
    )]
    PoolTooSmall {
        query_id: String,
        available: usize,
        requested: usize,
    },

    #[error("training diverged at step {step} (loss is not finite)")]
    Diverged { step: usize },

    #[error("stale or missing upstream artifact {path}: {reason}; rerun `{stage}`")]
    StaleArtifact {
        path: PathBuf,
        stage: String,
        reason: String,
    },

    #[error("{0} already exists; pass --force to overwrite")]
    WouldOverwrite(PathBuf),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit status for the command-line front end:
    /// 1 usage, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidParameter(_) | Error::WouldOverwrite(_) => 1,
            Error::Backend(_) | Error::SyntaxHook(_) | Error::EmbedInterrupted { .. } => 3,
            _ => 2,
        }
    }
}
