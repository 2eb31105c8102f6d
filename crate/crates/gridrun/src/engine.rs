//! Job execution: sharded map, partitioned shuffle, deterministic reduce.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::job::{JobSpec, MapContext, Mapper, PairSink, RecordSink, Reducer};
use crate::sort::sort_pairs;
use crate::{EngineError, Partitioner};

/// What a finished job hands back to the driver.
#[derive(Debug)]
pub struct JobOutput {
    /// Output shards in partition order, `part-00000` .. `part-{R-1}`.
    /// Every shard exists, even when its partition received no keys.
    pub shards: Vec<PathBuf>,
    /// Named counters summed over all map and reduce tasks.
    pub counters: BTreeMap<String, u64>,
}

static JOB_SEQ: AtomicU64 = AtomicU64::new(0);

/// Runs one map-reduce job to completion.
///
/// Every input record is mapped exactly once; emitted pairs are routed by
/// `stable_hash(key) mod partitions`; each reduce call sees its key's
/// values sorted lexicographically and keys arrive in ascending order.
/// Output shards are byte-identical for any worker count.
pub fn run_job<M: Mapper, R: Reducer>(spec: &JobSpec<M, R>) -> Result<JobOutput, EngineError> {
    validate(spec)?;
    fs::create_dir_all(&spec.output_dir).map_err(EngineError::io(&spec.output_dir))?;
    let scratch = create_scratch(&spec.scratch_dir)?;
    let result = execute(spec, &scratch);
    let _ = fs::remove_dir_all(&scratch);
    result
}

fn validate<M, R>(spec: &JobSpec<M, R>) -> Result<(), EngineError> {
    if spec.partitions < 1 {
        return Err(EngineError::InvalidSpec("partitions must be >= 1".into()));
    }
    if spec.workers < 1 {
        return Err(EngineError::InvalidSpec("workers must be >= 1".into()));
    }
    if spec.sort_buffer_pairs < 1 {
        return Err(EngineError::InvalidSpec(
            "sort_buffer_pairs must be >= 1".into(),
        ));
    }
    for input in &spec.inputs {
        if !input.is_file() {
            return Err(EngineError::InvalidSpec(format!(
                "input shard {} does not exist",
                input.display()
            )));
        }
    }
    Ok(())
}

fn create_scratch(base: &Path) -> Result<PathBuf, EngineError> {
    let seq = JOB_SEQ.fetch_add(1, Ordering::Relaxed);
    let dir = base.join(format!("job-{}-{seq:05}", std::process::id()));
    fs::create_dir_all(&dir).map_err(EngineError::io(&dir))?;
    Ok(dir)
}

fn execute<M: Mapper, R: Reducer>(
    spec: &JobSpec<M, R>,
    scratch: &Path,
) -> Result<JobOutput, EngineError> {
    let map_tasks = spec.inputs.len();
    let map_counters = run_tasks(spec.workers, map_tasks, |task| {
        map_task(spec, scratch, task)
    })?;

    let reduce_counters = run_tasks(spec.workers, spec.partitions, |partition| {
        reduce_task(spec, scratch, map_tasks, partition)
    })?;

    let mut counters = BTreeMap::new();
    for task in map_counters.into_iter().chain(reduce_counters) {
        for (name, delta) in task {
            *counters.entry(name).or_insert(0) += delta;
        }
    }

    let shards = (0..spec.partitions)
        .map(|p| spec.output_dir.join(shard_name(p)))
        .collect();
    Ok(JobOutput { shards, counters })
}

pub(crate) fn shard_name(partition: usize) -> String {
    format!("part-{partition:05}")
}

/// Runs `tasks` task indices on `workers` threads. Task results are
/// returned in task order; on failure the error from the lowest-numbered
/// failing task is reported.
fn run_tasks<T, F>(workers: usize, tasks: usize, f: F) -> Result<Vec<T>, EngineError>
where
    T: Send,
    F: Fn(usize) -> Result<T, EngineError> + Sync,
{
    let next = AtomicUsize::new(0);
    let cancel = AtomicBool::new(false);
    let results: Mutex<Vec<(usize, T)>> = Mutex::new(Vec::with_capacity(tasks));
    let errors: Mutex<Vec<(usize, EngineError)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers.min(tasks).max(1) {
            scope.spawn(|| loop {
                if cancel.load(Ordering::Relaxed) {
                    break;
                }
                let task = next.fetch_add(1, Ordering::Relaxed);
                if task >= tasks {
                    break;
                }
                match f(task) {
                    Ok(value) => results.lock().unwrap().push((task, value)),
                    Err(err) => {
                        errors.lock().unwrap().push((task, err));
                        cancel.store(true, Ordering::Relaxed);
                    }
                }
            });
        }
    });

    let mut errors = errors.into_inner().unwrap();
    if !errors.is_empty() {
        errors.sort_by_key(|(task, _)| *task);
        return Err(errors.remove(0).1);
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(task, _)| *task);
    Ok(results.into_iter().map(|(_, value)| value).collect())
}

fn map_task<M: Mapper, R>(
    spec: &JobSpec<M, R>,
    scratch: &Path,
    task: usize,
) -> Result<BTreeMap<String, u64>, EngineError> {
    let input = &spec.inputs[task];
    let partitioner = Partitioner::new(spec.partitions);
    let file = File::open(input).map_err(EngineError::io(input))?;
    let mut reader = BufReader::with_capacity(1 << 16, file);

    // One scratch writer per partition, created on first use so sparse
    // jobs do not open R files per task.
    let mut writers: Vec<Option<BufWriter<File>>> = (0..spec.partitions).map(|_| None).collect();
    let mut sink = PairSink::default();
    let mut line_no = 0u64;
    let mut record = String::new();

    loop {
        record.clear();
        let read = reader
            .read_line(&mut record)
            .map_err(EngineError::io(input))?;
        if read == 0 {
            break;
        }
        while record.ends_with('\n') || record.ends_with('\r') {
            record.pop();
        }
        line_no += 1;
        let ctx = MapContext {
            input,
            line: line_no,
        };
        spec.mapper
            .map(&ctx, &record, &mut sink)
            .map_err(|source| EngineError::MapFailed {
                input: input.clone(),
                line: line_no,
                record: truncate(&record),
                source,
            })?;
        for (key, value) in sink.pairs.drain(..) {
            if key.contains('\t') || key.contains('\n') {
                return Err(EngineError::InvalidKey(truncate(&key)));
            }
            if value.contains('\n') {
                return Err(EngineError::InvalidValue { key });
            }
            let partition = partitioner.partition(&key);
            if writers[partition].is_none() {
                let path = scratch.join(format!("map-{task:05}-{partition:05}"));
                let file = File::create(&path).map_err(EngineError::io(&path))?;
                writers[partition] = Some(BufWriter::with_capacity(1 << 16, file));
            }
            let writer = writers[partition].as_mut().unwrap();
            writeln!(writer, "{key}\t{value}")
                .map_err(EngineError::io(scratch.join(format!("map-{task:05}"))))?;
        }
    }

    for writer in writers.into_iter().flatten() {
        writer.into_inner().map_err(|e| EngineError::Io {
            path: scratch.to_path_buf(),
            source: e.into_error(),
        })?;
    }
    Ok(sink.counters)
}

fn reduce_task<M, R: Reducer>(
    spec: &JobSpec<M, R>,
    scratch: &Path,
    map_tasks: usize,
    partition: usize,
) -> Result<BTreeMap<String, u64>, EngineError> {
    let inputs: Vec<PathBuf> = (0..map_tasks)
        .map(|task| scratch.join(format!("map-{task:05}-{partition:05}")))
        .collect();
    let out_path = spec.output_dir.join(shard_name(partition));
    let file = File::create(&out_path).map_err(EngineError::io(&out_path))?;
    let mut writer = BufWriter::with_capacity(1 << 16, file);
    let mut sink = RecordSink::default();
    let run_prefix = scratch.join(format!("sort-{partition:05}"));

    let mut current: Option<(String, Vec<String>)> = None;
    sort_pairs(&inputs, &run_prefix, spec.sort_buffer_pairs, |(key, value)| {
        match current.as_mut() {
            Some((group_key, values)) if *group_key == key => values.push(value),
            _ => {
                if let Some((group_key, values)) = current.take() {
                    reduce_group(
                        &spec.reducer,
                        &group_key,
                        &values,
                        &mut sink,
                        &mut writer,
                        &out_path,
                    )?;
                }
                current = Some((key, vec![value]));
            }
        }
        Ok(())
    })?;
    if let Some((group_key, values)) = current.take() {
        reduce_group(
            &spec.reducer,
            &group_key,
            &values,
            &mut sink,
            &mut writer,
            &out_path,
        )?;
    }

    writer.flush().map_err(EngineError::io(&out_path))?;
    Ok(sink.counters)
}

fn reduce_group<R: Reducer>(
    reducer: &R,
    key: &str,
    values: &[String],
    sink: &mut RecordSink,
    writer: &mut BufWriter<File>,
    out_path: &Path,
) -> Result<(), EngineError> {
    reducer
        .reduce(key, values, sink)
        .map_err(|source| EngineError::ReduceFailed {
            key: key.to_string(),
            source,
        })?;
    for record in sink.records.drain(..) {
        if record.contains('\n') {
            return Err(EngineError::InvalidValue {
                key: key.to_string(),
            });
        }
        writeln!(writer, "{record}").map_err(EngineError::io(out_path))?;
    }
    Ok(())
}

fn truncate(s: &str) -> String {
    const LIMIT: usize = 160;
    if s.len() <= LIMIT {
        return s.to_string();
    }
    let mut end = LIMIT;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}
