use std::path::PathBuf;

/// Failures mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config or input file; exit 2.
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Io { .. } | CliError::Failed(_) => 1,
        }
    }
}
