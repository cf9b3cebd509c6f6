use std::io;
use std::path::PathBuf;

use crate::blockstore::BlockId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("matrix `{0}` already exists")]
    MatrixExists(String),

    #[error("block {id} of `{matrix}` was already written")]
    BlockExists { matrix: String, id: BlockId },

    #[error("block {id} of `{matrix}` is missing")]
    MissingBlock { matrix: String, id: BlockId },

    #[error("block {id} of `{matrix}` is corrupt: {reason}")]
    CorruptBlock {
        matrix: String,
        id: BlockId,
        reason: String,
    },

    #[error("block {id} is outside the {block_rows}x{block_cols} grid of `{matrix}`")]
    OutOfRange {
        matrix: String,
        id: BlockId,
        block_rows: usize,
        block_cols: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid matrix metadata: {0}")]
    Meta(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed at task {key}: {source}")]
    TaskFailed {
        stage: String,
        key: String,
        #[source]
        source: Box<Error>,
    },

    #[error("duplicate task key {key} in stage `{stage}`")]
    DuplicateTask { stage: String, key: String },

    #[error("matrix is not symmetric diagonally dominant: {0}")]
    NotSdd(String),

    #[error("matrix is not symmetric: {0}")]
    Asymmetric(String),

    #[error("invalid adjacency matrix: {0}")]
    InvalidAdjacency(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dense oracle refuses n = {n} (cap is {cap})")]
    Oversized { n: usize, cap: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("edge list line {line}: {reason}")]
    Ingest { line: usize, reason: String },

    #[error("embedding provenance mismatch: {0}")]
    Provenance(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
