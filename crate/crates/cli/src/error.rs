use std::fmt;
use std::process::ExitCode;

use simcgnn::Error;

/// Exit statuses. Clap's own parse failures also exit with `USAGE`.
pub mod exit {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const DIVERGED: u8 = 4;
    pub const INCOMPATIBLE: u8 = 5;
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) => match e {
                Error::Config(_) => exit::USAGE,
                Error::Parse { .. } | Error::EmptyInput | Error::EmptyDataset | Error::Io { .. } => exit::DATA,
                Error::Diverged { .. } => exit::DIVERGED,
                Error::Compatibility(_) => exit::INCOMPATIBLE,
                Error::Contract(_) | Error::Dimension { .. } => exit::OTHER,
            },
        })
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

/// Writes `contents` to `path`, mapping failures to an I/O error.
pub fn write(path: &std::path::Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

pub fn read(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}
