use std::path::PathBuf;

use crate::batch::SimulationBatch;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ingestion
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}: duplicate observation for ({learner}, {question}, attempt {attempt})")]
    DuplicateObservation {
        line: u64,
        learner: String,
        question: String,
        attempt: usize,
    },
    #[error("line {line}: outcome must be 0 or 1, got {value:?}")]
    BadOutcome { line: u64, value: String },
    #[error("line {line}: attempt must be a positive integer, got {value:?}")]
    BadAttempt { line: u64, value: String },
    #[error("index {index} out of range for axis {axis} of length {len}")]
    Index {
        axis: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // factorization
    #[error("stratification impossible: {0}")]
    Stratification(String),
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),

    // patterns
    #[error("power-law fit needs at least 2 points, got {0}")]
    InsufficientPoints(usize),
    #[error("dimension {0} has zero variance")]
    DegenerateDimension(usize),
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { k: usize, n: usize },

    // gan
    #[error("GAN training diverged at step {step}")]
    GanDivergence { step: usize },

    // prompt / llm
    #[error("prompt context has an empty matrix")]
    EmptyContext,
    #[error("no parseable matrix in reply")]
    Parse { reply: String },
    #[error("reply held {} of {requested} requested rows", batch.len())]
    PartialResult {
        batch: SimulationBatch,
        requested: usize,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("simulation failed after {attempts} attempts ({} rows gathered)", partial.len())]
    SimulationFailed {
        attempts: usize,
        partial: SimulationBatch,
    },

    // eval
    #[error("sample is empty")]
    EmptySample,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
