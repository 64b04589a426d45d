use std::io;

use thiserror::Error;

/// Every failure the pipeline can report. The `Display` strings are the
/// stable diagnostic codes printed by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-corpus")]
    EmptyCorpus,
    #[error("invalid-config: {0}")]
    InvalidConfig(String),
    #[error("malformed-line({0})")]
    MalformedLine(usize),
    #[error("duplicate-doc({0})")]
    DuplicateDoc(String),
    #[error("no-such-node({0})")]
    NoSuchNode(usize),
    #[error("bad-id: {0}")]
    BadId(String),
    #[error("no-neighbors")]
    NoNeighbors,
    #[error("zero-vector")]
    ZeroVector,
    #[error("zero-vector({doc},{group})")]
    ZeroRecord { doc: String, group: u32 },
    #[error("dim-mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("numerical-blowup")]
    NumericalBlowup,
    #[error("no-judgments({0})")]
    NoJudgments(String),
    #[error("bad-format: {0}")]
    BadFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<io::Error> for Error {
    fn from(source: io::Error) -> Self {
        Error::Io {
            path: String::from("<stream>"),
            source,
        }
    }
}
