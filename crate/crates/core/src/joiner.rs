//! Reduce-side join of cluster assignments with labels on the shared
//! data-field key, plus the quadratic nested-loop baseline it replaces.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gridrun::{run_job, JobError, JobSpec, MapContext, PairSink, RecordSink};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::ClassId;
use crate::EngineConfig;

/// One joined line: the key existed in both inputs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct JoinedRecord {
    pub key: String,
    pub cluster: usize,
    pub label: ClassId,
}

/// Join bookkeeping. `matched` counts emitted records (the per-key cross
/// product); unmatched counts are keys present on one side only;
/// `collision_keys` counts keys with multiplicity > 1 on either side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct JoinReport {
    pub matched: u64,
    pub unmatched_left: u64,
    pub unmatched_right: u64,
    pub collision_keys: u64,
}

impl JoinReport {
    pub fn summary(&self) -> String {
        format!(
            "join: matched={} unmatched_left={} unmatched_right={} collision_keys={}",
            self.matched, self.unmatched_left, self.unmatched_right, self.collision_keys
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JoinError {
    #[error(transparent)]
    Engine(#[from] gridrun::EngineError),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JoinError + '_ {
    move |source| JoinError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Join tuning knobs on top of the engine settings.
#[derive(Debug, Clone)]
pub struct JoinOptions {
    /// Abort if one key's left x right cross product exceeds this.
    pub cross_product_bound: u64,
    /// Inputs larger than this many lines are split into chunks so map
    /// work parallelizes; chunking never changes output bytes.
    pub chunk_lines: u64,
}

impl Default for JoinOptions {
    fn default() -> Self {
        JoinOptions {
            cross_product_bound: 10_000,
            chunk_lines: 250_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

/// Tags each line with its source side and forwards it keyed by the join
/// key. Left lines are `cluster<TAB>key`, right lines `key<TAB>classId`.
struct TagMapper {
    /// chunk path -> (side, first line number of the chunk in its source file)
    sources: HashMap<PathBuf, (Side, u64)>,
}

impl gridrun::Mapper for TagMapper {
    fn map(&self, ctx: &MapContext<'_>, record: &str, out: &mut PairSink) -> Result<(), JobError> {
        let &(side, base) = self
            .sources
            .get(ctx.input)
            .ok_or_else(|| JobError::new("unregistered input chunk"))?;
        let line = base + ctx.line;
        match side {
            Side::Left => {
                let (cluster, key) = record.split_once('\t').ok_or_else(|| {
                    JobError::new(format!("left input line {line}: missing tab"))
                })?;
                let cluster: usize = cluster.parse().map_err(|_| {
                    JobError::new(format!("left input line {line}: bad cluster id {cluster:?}"))
                })?;
                out.emit(key, format!("L{cluster}"));
            }
            Side::Right => {
                let (key, class) = record.split_once('\t').ok_or_else(|| {
                    JobError::new(format!("right input line {line}: missing tab"))
                })?;
                let class: u8 = class.parse().map_err(|_| {
                    JobError::new(format!("right input line {line}: bad class id {class:?}"))
                })?;
                ClassId::new(class).map_err(|e| {
                    JobError::new(format!("right input line {line}: {e}"))
                })?;
                out.emit(key, format!("R{class}"));
            }
        }
        Ok(())
    }
}

/// Inner join per key: emits the cross product of left and right values.
/// Values arrive sorted, so all `L...` tags precede all `R...` tags.
struct JoinReducer {
    cross_product_bound: u64,
}

impl gridrun::Reducer for JoinReducer {
    fn reduce(&self, key: &str, values: &[String], out: &mut RecordSink) -> Result<(), JobError> {
        let split = values.partition_point(|v| v.starts_with('L'));
        let (lefts, rights) = values.split_at(split);
        if lefts.len() > 1 || rights.len() > 1 {
            out.count("collision_keys", 1);
        }
        if lefts.is_empty() {
            out.count("unmatched_right", 1);
            return Ok(());
        }
        if rights.is_empty() {
            out.count("unmatched_left", 1);
            return Ok(());
        }
        let pairs = lefts.len() as u64 * rights.len() as u64;
        if pairs > self.cross_product_bound {
            return Err(JobError::new(format!(
                "cross product for key {key:?} is {pairs}, above the bound {}",
                self.cross_product_bound
            )));
        }
        out.count("matched", pairs);
        for left in lefts {
            for right in rights {
                out.emit(format!("{key}\t{}\t{}", &left[1..], &right[1..]));
            }
        }
        Ok(())
    }
}

fn count_lines(path: &Path) -> Result<u64, JoinError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut buf = String::new();
    let mut lines = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            return Ok(lines);
        }
        lines += 1;
    }
}

/// Splits `path` into chunks of at most `chunk_lines` lines under `dir`.
/// Small files are passed through untouched. Returns (chunk, base line).
fn chunk_input(
    path: &Path,
    side: Side,
    chunk_lines: u64,
    dir: &Path,
) -> Result<Vec<(PathBuf, u64)>, JoinError> {
    let total = count_lines(path)?;
    if total <= chunk_lines {
        return Ok(vec![(path.to_path_buf(), 0)]);
    }
    let tag = match side {
        Side::Left => "left",
        Side::Right => "right",
    };
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut chunks = Vec::new();
    let mut writer: Option<BufWriter<File>> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if (idx as u64).is_multiple_of(chunk_lines) {
            if let Some(w) = writer.take() {
                w.into_inner().map_err(|e| JoinError::Io {
                    path: dir.to_path_buf(),
                    source: e.into_error(),
                })?;
            }
            let chunk = dir.join(format!("{tag}-chunk-{:05}", chunks.len()));
            let f = File::create(&chunk).map_err(io_err(&chunk))?;
            chunks.push((chunk, idx as u64));
            writer = Some(BufWriter::new(f));
        }
        let w = writer.as_mut().expect("writer exists after rotation");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    if let Some(w) = writer.take() {
        w.into_inner().map_err(|e| JoinError::Io {
            path: dir.to_path_buf(),
            source: e.into_error(),
        })?;
    }
    Ok(chunks)
}

/// Reduce-side inner join of a clustered-points file with a labels file.
/// Output shards hold `key<TAB>clusterId<TAB>classId` lines sorted by key;
/// shards are byte-identical for any worker count.
pub fn mr_join(
    left: &Path,
    right: &Path,
    output_dir: &Path,
    engine: &EngineConfig,
    options: &JoinOptions,
) -> Result<(Vec<PathBuf>, JoinReport), JoinError> {
    let chunk_dir = engine.scratch_dir.join(format!(
        "join-chunks-{}-{:x}",
        std::process::id(),
        gridrun::stable_hash(&format!("{}|{}", left.display(), output_dir.display()))
    ));
    std::fs::create_dir_all(&chunk_dir).map_err(io_err(&chunk_dir))?;

    let mut sources = HashMap::new();
    let mut inputs = Vec::new();
    for (chunk, base) in chunk_input(left, Side::Left, options.chunk_lines, &chunk_dir)? {
        sources.insert(chunk.clone(), (Side::Left, base));
        inputs.push(chunk);
    }
    for (chunk, base) in chunk_input(right, Side::Right, options.chunk_lines, &chunk_dir)? {
        sources.insert(chunk.clone(), (Side::Right, base));
        inputs.push(chunk);
    }

    let spec = JobSpec::new(
        inputs,
        TagMapper { sources },
        JoinReducer {
            cross_product_bound: options.cross_product_bound,
        },
        &engine.scratch_dir,
        output_dir,
    )
    .partitions(engine.partitions)
    .workers(engine.workers);
    let result = run_job(&spec);
    let _ = std::fs::remove_dir_all(&chunk_dir);
    let output = result?;

    let counter = |name: &str| output.counters.get(name).copied().unwrap_or(0);
    let report = JoinReport {
        matched: counter("matched"),
        unmatched_left: counter("unmatched_left"),
        unmatched_right: counter("unmatched_right"),
        collision_keys: counter("collision_keys"),
    };
    Ok((output.shards, report))
}

fn parse_left(path: &Path) -> Result<Vec<(String, usize)>, JoinError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let (cluster, key) = line.split_once('\t').ok_or_else(|| JoinError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: "missing tab".into(),
        })?;
        let cluster: usize = cluster.parse().map_err(|_| JoinError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("bad cluster id {cluster:?}"),
        })?;
        rows.push((key.to_string(), cluster));
    }
    Ok(rows)
}

fn parse_right(path: &Path) -> Result<Vec<(String, ClassId)>, JoinError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let (key, class) = line.split_once('\t').ok_or_else(|| JoinError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: "missing tab".into(),
        })?;
        let class: u8 = class.parse().map_err(|_| JoinError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("bad class id {class:?}"),
        })?;
        let class = ClassId::new(class).map_err(|e| JoinError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        rows.push((key.to_string(), class));
    }
    Ok(rows)
}

/// The local baseline: a literal double loop that scans the whole right
/// file for every left line. Produces the same record multiset as
/// [`mr_join`]; used as its correctness oracle and as the quadratic end of
/// the complexity comparison.
pub fn nested_loop_join(
    left: &Path,
    right: &Path,
) -> Result<(Vec<JoinedRecord>, JoinReport), JoinError> {
    let left_rows = parse_left(left)?;
    let right_rows = parse_right(right)?;

    let mut joined = Vec::new();
    let mut left_matched = vec![false; left_rows.len()];
    let mut right_matched = vec![false; right_rows.len()];
    for (li, (lkey, cluster)) in left_rows.iter().enumerate() {
        for (ri, (rkey, label)) in right_rows.iter().enumerate() {
            if lkey == rkey {
                left_matched[li] = true;
                right_matched[ri] = true;
                joined.push(JoinedRecord {
                    key: lkey.clone(),
                    cluster: *cluster,
                    label: *label,
                });
            }
        }
    }

    let mut multiplicity: HashMap<&str, (u64, u64)> = HashMap::new();
    for (key, _) in &left_rows {
        multiplicity.entry(key).or_default().0 += 1;
    }
    for (key, _) in &right_rows {
        multiplicity.entry(key).or_default().1 += 1;
    }
    let collision_keys = multiplicity
        .values()
        .filter(|(l, r)| *l > 1 || *r > 1)
        .count() as u64;
    let unmatched_left = left_rows
        .iter()
        .zip(&left_matched)
        .filter(|(_, matched)| !**matched)
        .map(|((key, _), _)| key.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len() as u64;
    let unmatched_right = right_rows
        .iter()
        .zip(&right_matched)
        .filter(|(_, matched)| !**matched)
        .map(|((key, _), _)| key.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len() as u64;

    let report = JoinReport {
        matched: joined.len() as u64,
        unmatched_left,
        unmatched_right,
        collision_keys,
    };
    Ok((joined, report))
}

/// Reads mr_join output shards back into records (for comparisons).
pub fn read_joined(shards: &[PathBuf]) -> Result<Vec<JoinedRecord>, JoinError> {
    let mut records = Vec::new();
    for shard in shards {
        for (idx, line) in std::fs::read_to_string(shard)
            .map_err(io_err(shard))?
            .lines()
            .enumerate()
        {
            let line_no = idx as u64 + 1;
            let mut fields = line.split('\t');
            let parse_err = |message: String| JoinError::Parse {
                path: shard.clone(),
                line: line_no,
                message,
            };
            let key = fields
                .next()
                .ok_or_else(|| parse_err("missing key".into()))?;
            let cluster: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| parse_err("bad cluster".into()))?;
            let class: u8 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| parse_err("bad class".into()))?;
            records.push(JoinedRecord {
                key: key.to_string(),
                cluster,
                label: ClassId::new(class).map_err(|e| parse_err(e.to_string()))?,
            });
        }
    }
    Ok(records)
}

/// Timing for one input size.
#[derive(Debug, Clone)]
pub struct BenchPoint {
    pub n: u64,
    pub nested_median_secs: Option<f64>,
    pub mr_median_secs: Option<f64>,
}

/// Result of [`join_benchmark`]: per-size medians and log-log slopes.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    pub nested_slope: Option<f64>,
    pub mr_slope: Option<f64>,
    pub trials: usize,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = String::from("n\tnested_secs\tmr_secs\n");
        for point in &self.points {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |s| format!("{s:.4}"));
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                point.n,
                fmt(point.nested_median_secs),
                fmt(point.mr_median_secs)
            ));
        }
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |s| format!("{s:.3}"));
        out.push_str(&format!(
            "log-log slope: nested={} mr={}\n",
            fmt(self.nested_slope),
            fmt(self.mr_slope)
        ));
        out
    }
}

/// What to measure: sizes may differ per method because the quadratic
/// baseline becomes impractical long before the map-reduce join does.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub nested_sizes: Vec<u64>,
    pub mr_sizes: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
}

/// Writes a matched pair of synthetic join inputs of `n` lines each:
/// random 16-hex-digit keys, right side a permutation of the left keys.
pub fn write_benchmark_inputs(
    dir: &Path,
    n: u64,
    seed: u64,
) -> Result<(PathBuf, PathBuf), JoinError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<String> = (0..n).map(|_| format!("{:016x}", rng.gen::<u64>())).collect();

    let left = dir.join(format!("left-{n}.tsv"));
    let mut w = BufWriter::new(File::create(&left).map_err(io_err(&left))?);
    for key in &keys {
        writeln!(w, "{}\t{key}", rng.gen_range(0..8usize)).map_err(io_err(&left))?;
    }
    w.flush().map_err(io_err(&left))?;

    keys.shuffle(&mut rng);
    let right = dir.join(format!("right-{n}.tsv"));
    let mut w = BufWriter::new(File::create(&right).map_err(io_err(&right))?);
    for key in &keys {
        writeln!(w, "{key}\t{}", rng.gen_range(1..=8u8)).map_err(io_err(&right))?;
    }
    w.flush().map_err(io_err(&right))?;
    Ok((left, right))
}

/// Least-squares slope of ln(y) against ln(x).
pub fn fit_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    }
}

/// Measures nested-loop and map-reduce join wall-clock across input sizes
/// and fits a log-log slope per method. Trials run sequentially so the
/// timer is not disturbed.
pub fn join_benchmark(
    spec: &BenchmarkSpec,
    work_dir: &Path,
    engine: &EngineConfig,
) -> Result<BenchReport, JoinError> {
    let mut sizes: Vec<u64> = spec
        .nested_sizes
        .iter()
        .chain(&spec.mr_sizes)
        .copied()
        .collect();
    sizes.sort_unstable();
    sizes.dedup();

    let mut points = Vec::new();
    let mut nested_points = Vec::new();
    let mut mr_points = Vec::new();
    for &n in &sizes {
        let input_dir = work_dir.join(format!("inputs-{n}"));
        let (left, right) = write_benchmark_inputs(&input_dir, n, spec.seed ^ n)?;

        let nested_median = if spec.nested_sizes.contains(&n) {
            let mut samples = Vec::with_capacity(spec.trials);
            for _ in 0..spec.trials {
                let start = Instant::now();
                let (joined, _) = nested_loop_join(&left, &right)?;
                samples.push(start.elapsed().as_secs_f64());
                assert_eq!(joined.len() as u64, n);
            }
            let m = median(&mut samples);
            nested_points.push((n as f64, m));
            Some(m)
        } else {
            None
        };

        let mr_median = if spec.mr_sizes.contains(&n) {
            let mut samples = Vec::with_capacity(spec.trials);
            for trial in 0..spec.trials {
                let out_dir = work_dir.join(format!("mr-{n}-{trial}"));
                let start = Instant::now();
                let (_, report) =
                    mr_join(&left, &right, &out_dir, engine, &JoinOptions::default())?;
                samples.push(start.elapsed().as_secs_f64());
                assert_eq!(report.matched, n);
                let _ = std::fs::remove_dir_all(&out_dir);
            }
            let m = median(&mut samples);
            mr_points.push((n as f64, m));
            Some(m)
        } else {
            None
        };

        points.push(BenchPoint {
            n,
            nested_median_secs: nested_median,
            mr_median_secs: mr_median,
        });
        let _ = std::fs::remove_dir_all(&input_dir);
    }

    Ok(BenchReport {
        nested_slope: (nested_points.len() >= 2).then(|| fit_log_slope(&nested_points)),
        mr_slope: (mr_points.len() >= 2).then(|| fit_log_slope(&mr_points)),
        points,
        trials: spec.trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(path: &Path, lines: &[&str]) {
        let mut body = lines.join("\n");
        if !lines.is_empty() {
            body.push('\n');
        }
        std::fs::write(path, body).unwrap();
    }

    fn engine(dir: &Path) -> EngineConfig {
        EngineConfig {
            workers: 2,
            partitions: 3,
            scratch_dir: dir.join("scratch"),
        }
    }

    fn sorted(mut records: Vec<JoinedRecord>) -> Vec<JoinedRecord> {
        records.sort();
        records
    }

    #[test]
    fn single_key_match() {
        let dir = tempfile::tempdir().unwrap();
        let left = dir.path().join("left");
        let right = dir.path().join("right");
        write_file(&left, &["3\tk1"]);
        write_file(&right, &["k1\t5"]);

        let (shards, report) = mr_join(
            &left,
            &right,
            &dir.path().join("out"),
            &engine(dir.path()),
            &JoinOptions::default(),
        )
        .unwrap();
        let records = read_joined(&shards).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].key, "k1");
        assert_eq!(records[0].cluster, 3);
        assert_eq!(records[0].label.get(), 5);
        assert_eq!(
            report,
            JoinReport {
                matched: 1,
                ..Default::default()
            }
        );
    }

    #[test]
    fn disjoint_keys_join_to_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let left = dir.path().join("left");
        let right = dir.path().join("right");
        write_file(&left, &["3\tk1"]);
        write_file(&right, &["k2\t5"]);

        let (shards, report) = mr_join(
            &left,
            &right,
            &dir.path().join("out"),
            &engine(dir.path()),
            &JoinOptions::default(),
        )
        .unwrap();
        assert!(read_joined(&shards).unwrap().is_empty());
        assert_eq!(report.matched, 0);
        assert_eq!(report.unmatched_left, 1);
        assert_eq!(report.unmatched_right, 1);
    }

    #[test]
    fn duplicate_left_values_cross_product() {
        let dir = tempfile::tempdir().unwrap();
        let left = dir.path().join("left");
        let right = dir.path().join("right");
        write_file(&left, &["1\tk1", "2\tk1"]);
        write_file(&right, &["k1\t4"]);

        let (shards, report) = mr_join(
            &left,
            &right,
            &dir.path().join("out"),
            &engine(dir.path()),
            &JoinOptions::default(),
        )
        .unwrap();
        let got = sorted(read_joined(&shards).unwrap());
        let (oracle, oracle_report) = nested_loop_join(&left, &right).unwrap();
        assert_eq!(got, sorted(oracle));
        assert_eq!(report.matched, 2);
        assert_eq!(report.collision_keys, 1);
        assert_eq!(report, oracle_report);
    }

    #[test]
    fn oracle_equivalence_randomized_small() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_left = rng.gen_range(1..400usize);
            let n_right = rng.gen_range(1..400usize);
            // small key space forces duplicates and unmatched keys
            let left_lines: Vec<String> = (0..n_left)
                .map(|_| format!("{}\tkey{:03}", rng.gen_range(0..8usize), rng.gen_range(0..120)))
                .collect();
            let right_lines: Vec<String> = (0..n_right)
                .map(|_| format!("key{:03}\t{}", rng.gen_range(0..120), rng.gen_range(1..=8u8)))
                .collect();
            let left = dir.path().join(format!("left-{seed}"));
            let right = dir.path().join(format!("right-{seed}"));
            let l: Vec<&str> = left_lines.iter().map(String::as_str).collect();
            let r: Vec<&str> = right_lines.iter().map(String::as_str).collect();
            write_file(&left, &l);
            write_file(&right, &r);

            let out_dir = dir.path().join(format!("out-{seed}"));
            let (shards, report) = mr_join(
                &left,
                &right,
                &out_dir,
                &engine(dir.path()),
                &JoinOptions {
                    cross_product_bound: 1_000_000,
                    ..Default::default()
                },
            )
            .unwrap();
            let (oracle, oracle_report) = nested_loop_join(&left, &right).unwrap();
            assert_eq!(
                sorted(read_joined(&shards).unwrap()),
                sorted(oracle),
                "seed {seed}"
            );
            assert_eq!(report, oracle_report, "seed {seed}");
        }
    }

    #[test]
    fn report_is_symmetric_under_swap() {
        let dir = tempfile::tempdir().unwrap();
        let left = dir.path().join("left");
        let right = dir.path().join("right");
        // left as clustered file, right as labels; swapped run reuses the
        // same lines with roles flipped
        write_file(&left, &["1\ta", "2\ta", "3\tb", "4\tonly-left"]);
        write_file(&right, &["a\t5", "b\t6", "b\t7", "only-right\t8"]);
        let (_, forward) = nested_loop_join(&left, &right).unwrap();

        let left_swapped = dir.path().join("left2");
        let right_swapped = dir.path().join("right2");
        write_file(&left_swapped, &["5\ta", "6\tb", "7\tb", "8\tonly-right"]);
        write_file(&right_swapped, &["a\t1", "a\t2", "b\t3", "only-left\t4"]);
        let (_, backward) = nested_loop_join(&left_swapped, &right_swapped).unwrap();

        assert_eq!(forward.matched, backward.matched);
        assert_eq!(forward.unmatched_left, backward.unmatched_right);
        assert_eq!(forward.unmatched_right, backward.unmatched_left);
        assert_eq!(forward.collision_keys, backward.collision_keys);
    }

    #[test]
    fn empty_left_joins_to_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let left = dir.path().join("left");
        let right = dir.path().join("right");
        write_file(&left, &[]);
        write_file(&right, &["k\t1", "k2\t2"]);
        let (joined, report) = nested_loop_join(&left, &right).unwrap();
        assert!(joined.is_empty());
        assert_eq!(report.unmatched_right, 2);
    }

    #[test]
    fn self_join_of_distinct_keys_yields_n_records() {
        let dir = tempfile::tempdir().unwrap();
        let left = dir.path().join("left");
        let right = dir.path().join("right");
        let n = 50;
        let left_lines: Vec<String> = (0..n).map(|i| format!("{}\tk{i:03}", i % 8)).collect();
        let right_lines: Vec<String> = (0..n).map(|i| format!("k{i:03}\t{}", i % 8 + 1)).collect();
        let l: Vec<&str> = left_lines.iter().map(String::as_str).collect();
        let r: Vec<&str> = right_lines.iter().map(String::as_str).collect();
        write_file(&left, &l);
        write_file(&right, &r);
        let (joined, report) = nested_loop_join(&left, &right).unwrap();
        assert_eq!(joined.len(), n);
        assert_eq!(report.matched, n as u64);
        assert_eq!(report.collision_keys, 0);
    }

    #[test]
    fn cross_product_guard_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let left = dir.path().join("left");
        let right = dir.path().join("right");
        let lines_left: Vec<String> = (0..4).map(|i| format!("{i}\thot")).collect();
        let lines_right: Vec<String> = (0..4).map(|_| "hot\t1".to_string()).collect();
        let l: Vec<&str> = lines_left.iter().map(String::as_str).collect();
        let r: Vec<&str> = lines_right.iter().map(String::as_str).collect();
        write_file(&left, &l);
        write_file(&right, &r);

        let err = mr_join(
            &left,
            &right,
            &dir.path().join("out"),
            &engine(dir.path()),
            &JoinOptions {
                cross_product_bound: 15,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("hot"), "got: {err}");
    }

    #[test]
    fn malformed_line_aborts_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let left = dir.path().join("left");
        let right = dir.path().join("right");
        write_file(&left, &["1\tk1", "no-tab-here"]);
        write_file(&right, &["k1\t1"]);
        let err = mr_join(
            &left,
            &right,
            &dir.path().join("out"),
            &engine(dir.path()),
            &JoinOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");

        let good_left = dir.path().join("left-good");
        let bad_class = dir.path().join("right-bad");
        write_file(&good_left, &["1\tk1"]);
        write_file(&bad_class, &["k1\t9"]);
        let err = mr_join(
            &good_left,
            &bad_class,
            &dir.path().join("out2"),
            &engine(dir.path()),
            &JoinOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("class"), "got: {err}");
    }

    #[test]
    fn chunked_inputs_match_unchunked_output() {
        let dir = tempfile::tempdir().unwrap();
        let input_dir = dir.path().join("inputs");
        let (left, right) = write_benchmark_inputs(&input_dir, 1000, 7).unwrap();

        let mut outputs = Vec::new();
        for (label, chunk_lines) in [("whole", 1_000_000u64), ("chunked", 128)] {
            let out_dir = dir.path().join(label);
            let (shards, report) = mr_join(
                &left,
                &right,
                &out_dir,
                &engine(dir.path()),
                &JoinOptions {
                    chunk_lines,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(report.matched, 1000);
            let mut bytes = Vec::new();
            for shard in shards {
                bytes.extend(std::fs::read(shard).unwrap());
            }
            outputs.push(bytes);
        }
        assert_eq!(outputs[0], outputs[1]);
    }

    #[test]
    fn slope_fit_recovers_known_exponents() {
        let quadratic: Vec<(f64, f64)> =
            [1e4, 2e4, 4e4].iter().map(|&n| (n, 3e-9 * n * n)).collect();
        assert!((fit_log_slope(&quadratic) - 2.0).abs() < 1e-9);
        let linearish: Vec<(f64, f64)> = [1e5f64, 2e5, 4e5]
            .iter()
            .map(|&n| (n, 2e-7 * n * n.ln()))
            .collect();
        let slope = fit_log_slope(&linearish);
        assert!(slope > 1.0 && slope < 1.3, "slope {slope}");
    }
}
