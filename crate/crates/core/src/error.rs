use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dialogue `{id}`: {message}")]
    InvalidDialogue { id: String, message: String },

    #[error("image `{id}`: {message}")]
    InvalidImage { id: String, message: String },

    #[error("record `{id}` has source `{found}`, expected `{expected}`")]
    SourceMismatch {
        id: String,
        expected: String,
        found: String,
    },

    #[error("dimension mismatch for `{id}`: expected {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("vector `{0}` contains a non-finite component")]
    NonFinite(String),

    #[error("vector `{0}` has zero norm")]
    ZeroNorm(String),

    #[error("unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },

    #[error("missing embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("annotation for `{instance_id}` by `{annotator_id}`: {message}")]
    InvalidAnnotation {
        instance_id: String,
        annotator_id: String,
        message: String,
    },

    #[error("no threshold for combination `{0}` and no default supplied")]
    MissingThreshold(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("candidate pool for split `{split}` has {available} distinct sentences, need {needed}")]
    PoolTooSmall {
        split: String,
        available: usize,
        needed: usize,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }
}
