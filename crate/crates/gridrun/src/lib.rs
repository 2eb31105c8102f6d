//! A miniature map-reduce execution engine for a single machine.
//!
//! `gridrun` runs jobs expressed in the classic `<key, value>` paradigm:
//! a pure mapper turns input records into key/value pairs, a
//! hash-partitioned shuffle groups the pairs by key, and a pure reducer
//! folds each key's values into output records. The shuffle is
//! materialized to scratch files and externally sorted, so partitions
//! larger than memory still work.
//!
//! The engine makes two guarantees that real clusters usually do not:
//!
//! * **Worker-count invariance** — output shards are byte-identical for
//!   any number of workers.
//! * **Deterministic value order** — every reduce call sees its values
//!   sorted lexicographically, making floating-point folds reproducible.

mod engine;
mod hash;
mod job;
mod sort;

pub use engine::{run_job, JobOutput};
pub use hash::{stable_hash, Partitioner};
pub use job::{JobError, JobSpec, MapContext, Mapper, PairSink, RecordSink, Reducer};

use std::io;
use std::path::PathBuf;

/// Errors raised by the engine itself or surfaced from user map/reduce code.
#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid job spec: {0}")]
    InvalidSpec(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("map failed on {input}:{line}: {source} (record: {record:?})")]
    MapFailed {
        input: PathBuf,
        line: u64,
        record: String,
        #[source]
        source: JobError,
    },

    #[error("reduce failed for key {key:?}: {source}")]
    ReduceFailed {
        key: String,
        #[source]
        source: JobError,
    },

    #[error("emitted key contains a tab or newline: {0:?}")]
    InvalidKey(String),

    #[error("emitted value or record contains a newline (key {key:?})")]
    InvalidValue { key: String },

    #[error("malformed shuffle line in {path}")]
    MalformedShuffle { path: PathBuf },
}

impl EngineError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> EngineError {
        let path = path.into();
        move |source| EngineError::Io { path, source }
    }
}
