use std::fmt;

use fedtn_core::Error;

/// A command failure together with the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, data or arguments. Exit code 2.
    Input(String),
    /// Non-finite values during training. Exit code 3.
    Numeric {
        round: Option<usize>,
        message: String,
    },
    /// Anything else, mostly I/O. Exit code 1.
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn in_round(e: Error, round: usize) -> Self {
        match e {
            Error::Numeric(message) => CliError::Numeric {
                round: Some(round),
                message,
            },
            other => CliError::from(other),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => CliError::Other(e.to_string()),
            Error::Numeric(message) => CliError::Numeric {
                round: None,
                message,
            },
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Other(m) => f.write_str(m),
            CliError::Numeric {
                round: Some(r),
                message,
            } => write!(f, "numeric error in round {r}: {message}"),
            CliError::Numeric {
                round: None,
                message,
            } => write!(f, "numeric error: {message}"),
        }
    }
}
