use std::fmt;
use std::path::Path;

use meanfield_core::Error as CoreError;

/// Failure of a command, carrying the process exit status it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: a configuration value is missing or invalid.
    Config { field: String, message: String },
    /// Exit 3: an input file is unreadable, malformed or incompatible.
    Data { message: String },
    /// Exit 4: a fit failed numerically.
    Numeric { message: String },
    /// Exit 1: an output could not be written.
    Output { message: String },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError::Data {
            message: message.into(),
        }
    }

    pub fn data_at(path: &Path, line: usize, message: impl fmt::Display) -> Self {
        CliError::data(format!("{}:{line}: {message}", path.display()))
    }

    pub fn output(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Output {
            message: format!("cannot write {}: {err}", path.display()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Output { .. } => 1,
            CliError::Config { .. } => 2,
            CliError::Data { .. } => 3,
            CliError::Numeric { .. } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { field, message } => write!(f, "configuration error in `{field}`: {message}"),
            CliError::Data { message } => write!(f, "data error: {message}"),
            CliError::Numeric { message } => write!(f, "numeric failure: {message}"),
            CliError::Output { message } => write!(f, "{message}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Config { field, reason } => CliError::config(field, reason),
            CoreError::Domain(msg) => CliError::data(msg),
            numeric => CliError::Numeric {
                message: numeric.to_string(),
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
