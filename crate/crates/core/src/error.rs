use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("blob size mismatch: {0}")]
    BlobSize(String),

    #[error("record {record_id}: invalid {field}: {reason}")]
    InvalidRecord {
        record_id: String,
        field: String,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("missing vector for record {record_id} at layer {layer} ({position})")]
    MissingVector {
        record_id: String,
        layer: usize,
        position: String,
    },

    #[error("undefined AUROC: need both classes (positives {n_pos}, negatives {n_neg})")]
    SingleClass { n_pos: usize, n_neg: usize },

    #[error("class with {count} samples is too small for {k} folds")]
    ClassTooSmall { count: usize, k: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn record(
        record_id: impl Into<String>,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::InvalidRecord {
            record_id: record_id.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}
