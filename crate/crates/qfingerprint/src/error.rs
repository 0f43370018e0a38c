//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at {path}: {reason}")]
    Ingest { path: String, reason: String },

    #[error("corpus is empty ({context})")]
    EmptyCorpus { context: String },

    #[error("duplicate record id `{id}`")]
    DuplicateId { id: String },

    #[error("missing parses for {} record(s): {}", ids.len(), ids.join(", "))]
    MissingParses { ids: Vec<String> },

    #[error("unbalanced parse for record `{id}`")]
    UnbalancedParse { id: String },

    #[error("parse error at offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("vocabulary is empty: no symbols produced by any input")]
    EmptyVocabulary,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDivergence { epoch: usize },

    #[error("no featurizable questions for cluster {cluster_id}")]
    Unfeaturizable { cluster_id: usize },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("missing artifact {path}: run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Architecture(_) => 2,
            Error::TrainingDivergence { .. } => 4,
            _ => 3,
        }
    }
}
