use std::fmt;

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    Usage = 2,
    Config = 3,
    Parse = 4,
    Runtime = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// A command failure together with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Self {
            status: ExitStatus::Config,
            error: e.into(),
        }
    }

    pub fn parse(e: impl Into<anyhow::Error>) -> Self {
        Self {
            status: ExitStatus::Parse,
            error: e.into(),
        }
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self {
            status: ExitStatus::Runtime,
            error: e.into(),
        }
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            status: self.status,
            error: self.error.context(what.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Library errors while reading inputs: unreadable files and bad settings
/// are configuration problems, malformed contents are parse problems.
pub fn input_error(e: assoc4d::Error) -> CliError {
    use assoc4d::Error as E;
    match e {
        E::Io(_) | E::Config(_) => CliError::config(e),
        E::Parse { .. } | E::Validation { .. } | E::InvalidCamera { .. } | E::InvalidTopology(_) | E::Mismatch(_) => {
            CliError::parse(e)
        }
        other => CliError::runtime(other),
    }
}

/// Library errors while computing.
pub fn runtime_error(e: assoc4d::Error) -> CliError {
    match e {
        assoc4d::Error::Config(_) => CliError::config(e),
        other => CliError::runtime(other),
    }
}

pub type CliResult<T> = Result<T, CliError>;
