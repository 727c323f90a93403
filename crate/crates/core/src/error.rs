use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown input format {0:?} (expected ndjson or csv)")]
    UnknownFormat(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("anonymization key must not be empty")]
    EmptyKey,
    #[error("{0} requires a non-empty graph")]
    EmptyGraph(&'static str),
    #[error("assignment does not cover node {0:?}")]
    MissingNode(String),
    #[error("inputs cover different node sets: {0}")]
    CoverageMismatch(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("gexf: {0}")]
    Gexf(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 2 for configuration problems,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownFormat(_) | Error::EmptyKey => 2,
            _ => 1,
        }
    }
}
