use std::path::PathBuf;

use sheref_core::config::ConfigError;
use sheref_core::models::ModelError;
use sheref_core::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input at line {line}: {reason}")]
    Stream { line: usize, reason: String },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Stream { .. } => 4,
            CliError::Run(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid { key, reason } => CliError::config(key, reason),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            SimError::Model(ModelError::InvalidParameter { name, reason }) => {
                CliError::config(format!("model.{name}"), reason)
            }
            other => CliError::Run(other.to_string()),
        }
    }
}
