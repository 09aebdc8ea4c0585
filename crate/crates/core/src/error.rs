use std::path::PathBuf;

use thiserror::Error;

use crate::nn::params::FetcError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    Dimension {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("input too short: length {len} < kernel width {kernel_width}")]
    InputTooShort { len: usize, kernel_width: usize },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shapley mode error: {0}")]
    Mode(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("every selected client failed: {0}")]
    AllClientsFailed(String),

    #[error("client {client_id}: {source}")]
    Client {
        client_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Fetc(#[from] FetcError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Net(#[from] std::io::Error),

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

    /// True for errors caused by bad input files or configuration rather than
    /// an internal failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Data(_)
            | Error::Empty(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Fetc(_)
            | Error::Dimension { .. }
            | Error::Structural(_)
            | Error::Mode(_) => true,
            Error::Client { source, .. } | Error::Round { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
