//! Job description and the mapper/reducer contract.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// A failure inside user map or reduce code. The engine wraps it with the
/// offending record or key.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct JobError(pub String);

impl JobError {
    pub fn new(message: impl Into<String>) -> Self {
        JobError(message.into())
    }
}

/// Where the record currently being mapped came from.
#[derive(Debug, Clone, Copy)]
pub struct MapContext<'a> {
    /// Input shard the record was read from.
    pub input: &'a Path,
    /// 1-based line number within that shard.
    pub line: u64,
}

/// Collects key/value pairs emitted by one mapper invocation.
///
/// Keys must not contain tabs or newlines; values must not contain
/// newlines. The engine validates on flush and aborts the job otherwise.
#[derive(Debug, Default)]
pub struct PairSink {
    pub(crate) pairs: Vec<(String, String)>,
    pub(crate) counters: BTreeMap<String, u64>,
}

impl PairSink {
    pub fn emit(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.pairs.push((key.into(), value.into()));
    }

    /// Adds to a named job counter. Counters are summed across all tasks.
    pub fn count(&mut self, name: &str, delta: u64) {
        *self.counters.entry(name.to_string()).or_insert(0) += delta;
    }
}

/// Collects output records emitted by one reducer invocation.
#[derive(Debug, Default)]
pub struct RecordSink {
    pub(crate) records: Vec<String>,
    pub(crate) counters: BTreeMap<String, u64>,
}

impl RecordSink {
    pub fn emit(&mut self, record: impl Into<String>) {
        self.records.push(record.into());
    }

    /// Adds to a named job counter. Counters are summed across all tasks.
    pub fn count(&mut self, name: &str, delta: u64) {
        *self.counters.entry(name.to_string()).or_insert(0) += delta;
    }
}

/// A pure function from one input record to key/value pairs.
///
/// Mappers must be side-effect-free with respect to job state: the engine
/// may invoke them from any worker thread in any task order.
pub trait Mapper: Sync {
    fn map(&self, ctx: &MapContext<'_>, record: &str, out: &mut PairSink) -> Result<(), JobError>;
}

/// A pure function from a key and its (lexicographically sorted) values to
/// output records.
pub trait Reducer: Sync {
    fn reduce(&self, key: &str, values: &[String], out: &mut RecordSink)
        -> Result<(), JobError>;
}

impl<F> Mapper for F
where
    F: Fn(&MapContext<'_>, &str, &mut PairSink) -> Result<(), JobError> + Sync,
{
    fn map(&self, ctx: &MapContext<'_>, record: &str, out: &mut PairSink) -> Result<(), JobError> {
        self(ctx, record, out)
    }
}

impl<F> Reducer for F
where
    F: Fn(&str, &[String], &mut RecordSink) -> Result<(), JobError> + Sync,
{
    fn reduce(
        &self,
        key: &str,
        values: &[String],
        out: &mut RecordSink,
    ) -> Result<(), JobError> {
        self(key, values, out)
    }
}

/// Everything the engine needs to run one map-reduce job.
///
/// `partitions` and `workers` are independent: output never depends on the
/// worker count.
pub struct JobSpec<M, R> {
    /// Input shards; each file is one map task.
    pub inputs: Vec<PathBuf>,
    pub mapper: M,
    pub reducer: R,
    /// Reduce partition count R (>= 1). Output shards are named
    /// `part-00000` .. `part-{R-1}`.
    pub partitions: usize,
    /// Worker thread count W (>= 1).
    pub workers: usize,
    /// Directory for intermediate shuffle files; a fresh subdirectory is
    /// created per job and removed afterwards.
    pub scratch_dir: PathBuf,
    /// Directory the output shards are written to.
    pub output_dir: PathBuf,
    /// Maximum key/value pairs held in memory per reduce task before a
    /// sorted run is spilled to disk.
    pub sort_buffer_pairs: usize,
}

impl<M, R> JobSpec<M, R> {
    pub fn new(
        inputs: Vec<PathBuf>,
        mapper: M,
        reducer: R,
        scratch_dir: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        JobSpec {
            inputs,
            mapper,
            reducer,
            partitions: 1,
            workers: 1,
            scratch_dir: scratch_dir.into(),
            output_dir: output_dir.into(),
            sort_buffer_pairs: 2_000_000,
        }
    }

    pub fn partitions(mut self, partitions: usize) -> Self {
        self.partitions = partitions;
        self
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn sort_buffer_pairs(mut self, pairs: usize) -> Self {
        self.sort_buffer_pairs = pairs;
        self
    }
}
