use std::fmt;
use std::path::Path;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments: exit 1.
    Config(String),
    /// Unreadable, unwritable or malformed files: exit 2.
    Io(String),
    /// Some cells of a sweep failed: exit 3.
    Partial(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Partial(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "input/output error: {m}"),
            CliError::Partial(m) => write!(f, "partial failure: {m}"),
        }
    }
}
