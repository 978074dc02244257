use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] trajstate::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "computation",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }

    /// One-line JSON object describing the failure.
    pub fn record(&self) -> serde_json::Value {
        let mut err = json!({
            "kind": self.kind(),
            "message": self.to_string(),
        });
        match self {
            CliError::Config { key, .. } if !key.is_empty() => err["key"] = json!(key),
            CliError::Io { path, .. } => err["path"] = json!(path.display().to_string()),
            _ => {}
        }
        json!({ "error": err })
    }
}

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
