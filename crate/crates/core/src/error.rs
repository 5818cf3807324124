use std::path::PathBuf;

use crate::autodiff::ParameterStore;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input contains no records")]
    EmptyInput,

    #[error("every session was removed by filtering")]
    EmptyDataset,

    #[error("incompatible artifacts: {0}")]
    Compatibility(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Diverged {
        epoch: usize,
        step: usize,
        last_finite: Box<ParameterStore>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
