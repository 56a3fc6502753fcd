use std::path::PathBuf;

use rare_core::config::{ConfigError, Violation};
use rare_core::ErrorKind;
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PRECONDITION: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Usage(String),

    #[error("output directory {0} is not empty (pass --force to overwrite)")]
    OutputNotEmpty(PathBuf),

    #[error(transparent)]
    Core(#[from] rare_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::OutputNotEmpty(_) => EXIT_CONFIG,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Invalid => EXIT_CONFIG,
                ErrorKind::Numeric => EXIT_NUMERIC,
                ErrorKind::Precondition => EXIT_PRECONDITION,
            },
            CliError::Io { .. } => EXIT_IO,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config",
            EXIT_NUMERIC => "numeric",
            EXIT_PRECONDITION => "precondition",
            _ => "io",
        }
    }

    fn violations(&self) -> &[Violation] {
        match self {
            CliError::Config(e) => e.violations(),
            _ => &[],
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
                "violations": self.violations(),
            }
        })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
