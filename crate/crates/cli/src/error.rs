use std::fmt;
use std::path::Path;

use oscope_core::Error as CoreError;

/// CLI failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Config does not match the schema (exit 2).
    Schema(String),
    /// A referenced input file is absent (exit 3).
    Missing(String),
    /// Any failure while computing (exit 4).
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Compute(_) => 4,
        }
    }

    pub fn from_io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(format!("{}: not found", path.display()))
        } else {
            CliError::Compute(format!("{}: {e}", path.display()))
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "config error {m}"),
            CliError::Missing(m) => write!(f, "missing input: {m}"),
            CliError::Compute(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e.root() {
            CoreError::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::Missing(format!("{}: not found", path.display()))
            }
            _ => CliError::Compute(e.to_string()),
        }
    }
}
