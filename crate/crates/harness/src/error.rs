use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("invalid workload spec: {0}")]
    Spec(String),

    #[error("invalid column map: {0}")]
    Columns(String),

    #[error(transparent)]
    Index(#[from] rask::RaskError),

    #[error("results diverge at block {block} (read {read} of op {op})")]
    EquivalenceViolation { op: usize, read: usize, block: u64 },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
