//! On-disk graph store.
//!
//! Raw edge lists are ingested into dense ordinals, then laid out as two
//! sorted copies of the edge set: product-major shards (one product-id range
//! per file) and a user-major mirror with the same per-file record counts.
//! Scans stream those files in block-sized reads and hand each vertex's full
//! adjacency to a [`ScanVisitor`].

mod format;
mod graph;
mod ingest;

use std::io;
use std::path::PathBuf;

pub use format::{
    decode_records, decode_shard, encode_shard, Manifest, ShardDescriptor, ShardHeader, FORMAT_VERSION,
    HEADER_LEN, MAGIC, RECORD_LEN,
};
pub use graph::{
    block_size_from_env, preprocess, BipartiteGraph, DegreeSummary, GraphStats, IoCounters,
    PreprocessOptions, ScanError, ScanVisitor, DEFAULT_BLOCK_SIZE,
};
pub use ingest::{ingest, write_edges, IngestError, IngestOutput, IngestReport, RawEdges, Rejection, Schema};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corrupt store: {0}")]
    Format(#[from] FormatError),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Decoding failures for shard files and manifests.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("header declares {declared} records but payload holds {actual}")]
    CountMismatch { declared: u64, actual: u64 },
    #[error("record {index} has reserved weight 0")]
    ZeroWeight { index: u64 },
    #[error("manifest: {0}")]
    Manifest(String),
}
