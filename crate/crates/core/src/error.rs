use crate::autodiff::TensorError;
use crate::encoder::EncoderError;
use crate::gating::ScheduleError;
use crate::losses::LossError;
use crate::metrics::MetricError;
use crate::molio::{DatasetError, SmilesError};
use crate::scaffold::SplitError;

/// Top-level error of training, evaluation and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric abort at epoch {epoch}, batch {batch}: {source}")]
    Numeric {
        epoch: usize,
        batch: usize,
        source: LossError,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Io { .. } | Error::Metric(_) => 2,
            Error::Config(_) | Error::Checkpoint(_) => 3,
            Error::Numeric { .. } | Error::Loss(_) | Error::Tensor(_) => 4,
        }
    }
}

impl From<DatasetError> for Error {
    fn from(e: DatasetError) -> Self {
        if e.is_config() {
            Error::Config(e.to_string())
        } else {
            Error::Data(e.to_string())
        }
    }
}

impl From<SmilesError> for Error {
    fn from(e: SmilesError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<SplitError> for Error {
    fn from(e: SplitError) -> Self {
        match e {
            SplitError::Overlap(..) | SplitError::EmptyBucket(_) | SplitError::Ratios(_) => {
                Error::Config(e.to_string())
            }
            SplitError::TooFewGroups(_) | SplitError::Uncovered { .. } => {
                Error::Data(e.to_string())
            }
        }
    }
}

impl From<EncoderError> for Error {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Tensor(t) => Error::Tensor(t),
            other => Error::Data(other.to_string()),
        }
    }
}

impl From<ScheduleError> for Error {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::Tensor(t) => Error::Tensor(t),
            other => Error::Config(other.to_string()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
