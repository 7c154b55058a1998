use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the experiment runner. Each maps to a process exit
/// code through [`CliError::exit_code`].
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in '{key}': {message}")]
    Config { key: String, message: String },

    #[error("cannot read config file {}: {source}", path.display())]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config file {} is not valid JSON: {source}", path.display())]
    ConfigSyntax {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("numerical divergence at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("{context}: {source}")]
    Numerics {
        context: String,
        #[source]
        source: mivi_core::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::ConfigFile { .. } | CliError::ConfigSyntax { .. } => 2,
            CliError::Divergence { .. } => 3,
            _ => 1,
        }
    }
}

/// Attaches a description of what was being computed to a core error,
/// keeping divergence distinguishable.
pub trait Context<T> {
    fn context(self, what: &str) -> Result<T>;
}

impl<T> Context<T> for mivi_core::Result<T> {
    fn context(self, what: &str) -> Result<T> {
        self.map_err(|e| match e {
            mivi_core::Error::Divergence { epoch, reason } => CliError::Divergence { epoch, reason },
            source => CliError::Numerics {
                context: what.to_string(),
                source,
            },
        })
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
