use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AuditError>;

/// Everything that can go wrong while loading data or computing a metric.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bad value: {0}")]
    BadValue(String),
    #[error("the embedding sets share no labels")]
    NoCommonVocab,
    #[error("label `{label}` appears in piles `{first}` and `{second}`")]
    OverlappingPiles {
        label: String,
        first: String,
        second: String,
    },
    #[error("duplicate pile name `{0}`")]
    DuplicatePile(String),
    #[error("pile `{0}` is empty")]
    EmptyPile(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("k = {k} is out of range 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("inputs are defined over different vocabularies")]
    VocabMismatch,
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("baseline curve is zero at k = {0}")]
    DegenerateBaselineValue(usize),
    #[error("performance `{0}` has no terms")]
    EmptyDescription(String),
    #[error("distance row `{0}` has zero spread")]
    DegenerateDistanceRow(String),
    #[error("clustering has no clusters")]
    EmptyClustering,
    #[error("target dimension {m} is invalid for {n} points")]
    BadDimension { m: usize, n: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl AuditError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        AuditError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for failures of a numerical procedure rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            AuditError::ZeroVector
                | AuditError::DegenerateBaselineValue(_)
                | AuditError::DegenerateDistanceRow(_)
        )
    }
}
