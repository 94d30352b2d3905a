use std::path::PathBuf;

use thiserror::Error;

use crate::spsa::TrainingTrace;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The observation has zero probability under the predicted belief.
    #[error("observation y={y} is impossible under the predicted belief")]
    ImpossibleObservation { y: usize },

    #[error("stop level {level} out of range 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("invalid cost function: {0}")]
    InvalidCost(String),

    #[error("grid with {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: u128, limit: usize },

    #[error("degenerate range in column `{0}`: all values are equal")]
    DegenerateRange(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    /// Training produced a non-finite objective or parameter. The trace up
    /// to and including the offending iteration is attached.
    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite {
        iteration: usize,
        what: String,
        trace: Box<TrainingTrace>,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
