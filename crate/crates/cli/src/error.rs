use std::path::{Path, PathBuf};

use perspective_core::{AnalysisError, ConfigError, LogError, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad configuration or input, 3 for a numeric abort, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn log(path: &Path, err: LogError) -> CliError {
        match err {
            LogError::Io(source) => CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => CliError::Input(format!("{}: {other}", path.display())),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => c.into(),
            e @ TrainError::Numeric { .. } => CliError::Numeric(e.to_string()),
            TrainError::Checkpoint(msg) => CliError::Input(format!("checkpoint: {msg}")),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Input(format!("analysis: {e}"))
    }
}
