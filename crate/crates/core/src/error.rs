use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("trajectory too short: {0}")]
    TooShort(String),

    #[error("index {index} out of range for {len} categories")]
    Index { index: usize, len: usize },

    #[error("too few trajectories: {have} for {folds} folds")]
    TooFewTrajectories { have: usize, folds: usize },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norms: {norms})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Short machine-parsable tag used by the command-line driver.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::DegenerateData(_) => "degenerate_data",
            Error::Schema(_) => "schema",
            Error::TooShort(_) => "too_short",
            Error::Index { .. } => "index",
            Error::TooFewTrajectories { .. } => "too_few_trajectories",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::InvalidInput(_) => "invalid_input",
            Error::Usage(_) => "usage",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }
}
