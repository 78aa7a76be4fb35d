//! Process-level error classes and their exit codes.

use parasource_core::error::CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration file, flags, or output environment; exit code 2.
    Config(String),
    /// One or more verification checks failed; exit code 1.
    Verification(Vec<String>),
    /// The computation itself failed (blow-up, degenerate data); exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Verification(names) => {
                write!(f, "verification failed: {}", names.join(", "))
            }
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter(_) | CoreError::GridMismatch(_) | CoreError::Io(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
