use std::fmt;

/// Harness failure with the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(veram::Error),
    /// Unreadable report or checkpoint.
    Format(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Format(_) => 3,
            CliError::Core(e) => match e {
                veram::Error::InvalidConfig(_) => 2,
                veram::Error::NonFinite(_) => 4,
                veram::Error::Dimension { .. } => 3,
                e if e.is_data_error() => 3,
                _ => 1,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Format(m) => write!(f, "bad file: {m}"),
            CliError::Core(veram::Error::MissingConfidences) => {
                write!(f, "confidence grids missing; run `veram confidence --dataset <dir>` first")
            }
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<veram::Error> for CliError {
    fn from(e: veram::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(veram::Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Format(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
