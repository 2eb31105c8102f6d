//! Hard K-means over keyed vectors with five distance metrics, executed
//! as one map-reduce job per Lloyd iteration.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use gridrun::{run_job, JobError, JobSpec, MapContext, PairSink, RecordSink};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::vecstore::{parse_components, KeyedVector, VecstoreError};
use crate::EngineConfig;

/// Distance (dissimilarity) measures supported by the clustering stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    SquaredEuclidean,
    Manhattan,
    Cosine,
    Tanimoto,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Euclidean,
        Metric::SquaredEuclidean,
        Metric::Manhattan,
        Metric::Cosine,
        Metric::Tanimoto,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::SquaredEuclidean => "squared-euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Cosine => "cosine",
            Metric::Tanimoto => "tanimoto",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = KmeansError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "squared-euclidean" | "squaredeuclidean" | "sqeuclidean" => {
                Ok(Metric::SquaredEuclidean)
            }
            "manhattan" => Ok(Metric::Manhattan),
            "cosine" => Ok(Metric::Cosine),
            "tanimoto" => Ok(Metric::Tanimoto),
            other => Err(KmeansError::InvalidParams(format!(
                "unknown metric {other:?} (expected euclidean, squared-euclidean, manhattan, cosine or tanimoto)"
            ))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KmeansError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("{metric} distance undefined: {reason}")]
    Degenerate { metric: Metric, reason: String },

    #[error("need {need} distinct vectors to initialize, found {have}")]
    NotEnoughDistinct { need: usize, have: usize },

    #[error("invalid k-means parameters: {0}")]
    InvalidParams(String),

    #[error(transparent)]
    Engine(#[from] gridrun::EngineError),

    #[error(transparent)]
    Vecstore(#[from] VecstoreError),

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

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KmeansError + '_ {
    move |source| KmeansError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm_sq(x: &[f64]) -> f64 {
    dot(x, x)
}

/// Distance between two equal-dimension vectors under `metric`.
///
/// Cosine is undefined when either operand has zero norm; Tanimoto only
/// when both are zero.
pub fn distance(metric: Metric, x: &[f64], y: &[f64]) -> Result<f64, KmeansError> {
    if x.len() != y.len() {
        return Err(KmeansError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let d = match metric {
        Metric::Euclidean => x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        Metric::SquaredEuclidean => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
        Metric::Manhattan => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
        Metric::Cosine => {
            let (nx, ny) = (norm_sq(x), norm_sq(y));
            if nx == 0.0 || ny == 0.0 {
                return Err(KmeansError::Degenerate {
                    metric,
                    reason: "zero-norm operand".into(),
                });
            }
            1.0 - dot(x, y) / (nx * ny).sqrt()
        }
        Metric::Tanimoto => {
            let d = dot(x, y);
            let denom = norm_sq(x) + norm_sq(y) - d;
            if denom == 0.0 {
                return Err(KmeansError::Degenerate {
                    metric,
                    reason: "both operands are zero vectors".into(),
                });
            }
            1.0 - d / denom
        }
    };
    Ok(d.max(0.0))
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn assign(point: &[f64], centroids: &[Vec<f64>], metric: Metric) -> Result<usize, KmeansError> {
    assign_with_cost(point, centroids, metric).map(|(index, _)| index)
}

/// Nearest centroid index plus the distance to it.
pub fn assign_with_cost(
    point: &[f64],
    centroids: &[Vec<f64>],
    metric: Metric,
) -> Result<(usize, f64), KmeansError> {
    if centroids.is_empty() {
        return Err(KmeansError::InvalidParams("no centroids".into()));
    }
    let mut best = (0, distance(metric, point, &centroids[0])?);
    for (index, centroid) in centroids.iter().enumerate().skip(1) {
        let d = distance(metric, point, centroid)?;
        if d < best.1 {
            best = (index, d);
        }
    }
    Ok(best)
}

fn reservoir_init<I>(items: I, k: usize, seed: u64) -> Result<Vec<Vec<f64>>, KmeansError>
where
    I: Iterator<Item = (String, Vec<f64>)>,
{
    if k < 1 {
        return Err(KmeansError::InvalidParams("k must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut reservoir: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut distinct = 0usize;
    for (key, values) in items {
        if !seen.insert(key) {
            continue;
        }
        if distinct < k {
            reservoir.push(values);
        } else {
            let j = rng.gen_range(0..=distinct);
            if j < k {
                reservoir[j] = values;
            }
        }
        distinct += 1;
    }
    if distinct < k {
        return Err(KmeansError::NotEnoughDistinct {
            need: k,
            have: distinct,
        });
    }
    Ok(reservoir)
}

/// Picks k distinct input vectors by seeded reservoir sampling over the
/// vector file. Distinctness is by canonical key.
pub fn init_centroids(input: &Path, k: usize, seed: u64) -> Result<Vec<Vec<f64>>, KmeansError> {
    let file = File::open(input).map_err(io_err(input))?;
    let mut parsed = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(io_err(input))?;
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once('\t').ok_or_else(|| KmeansError::Parse {
            path: input.to_path_buf(),
            line: line_no,
            message: "missing tab between key and values".into(),
        })?;
        parsed.push((key.to_string(), parse_components(rest, input, line_no)?));
    }
    reservoir_init(parsed.into_iter(), k, seed)
}

/// In-memory variant of [`init_centroids`].
pub fn init_centroids_from_vectors(
    data: &[KeyedVector],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, KmeansError> {
    reservoir_init(
        data.iter().map(|kv| (kv.key.clone(), kv.values.clone())),
        k,
        seed,
    )
}

/// Componentwise mean per cluster; an empty cluster keeps its previous
/// centroid. Partial sums are accumulated in key order so the result does
/// not depend on input permutation. Returns the new centroids and the
/// number of empty clusters.
pub fn update_centroids(
    data: &[KeyedVector],
    assignments: &[usize],
    k: usize,
    previous: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, u64), KmeansError> {
    if data.len() != assignments.len() {
        return Err(KmeansError::InvalidParams(format!(
            "{} assignments for {} vectors",
            assignments.len(),
            data.len()
        )));
    }
    let mut members: Vec<Vec<&KeyedVector>> = vec![Vec::new(); k];
    for (vector, &cluster) in data.iter().zip(assignments) {
        if cluster >= k {
            return Err(KmeansError::InvalidParams(format!(
                "assignment to cluster {cluster} with k={k}"
            )));
        }
        members[cluster].push(vector);
    }

    let mut centroids = Vec::with_capacity(k);
    let mut empty = 0u64;
    for (cluster, mut group) in members.into_iter().enumerate() {
        if group.is_empty() {
            empty += 1;
            centroids.push(previous[cluster].clone());
            continue;
        }
        group.sort_by(|a, b| a.key.cmp(&b.key));
        let dim = group[0].values.len();
        let mut sums = vec![0.0; dim];
        for vector in &group {
            if vector.values.len() != dim {
                return Err(KmeansError::DimensionMismatch {
                    left: dim,
                    right: vector.values.len(),
                });
            }
            for (sum, value) in sums.iter_mut().zip(&vector.values) {
                *sum += value;
            }
        }
        let n = group.len() as f64;
        centroids.push(sums.into_iter().map(|s| s / n).collect());
    }
    Ok((centroids, empty))
}

/// Result of a clustering run.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    pub metric: Metric,
    pub centroids: Vec<Vec<f64>>,
    /// Total assignment cost per iteration, against that iteration's
    /// pre-update centroids.
    pub cost_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// How many times a cluster came up empty and kept its previous
    /// centroid.
    pub empty_cluster_events: u64,
}

/// One line of the clustered-points file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub key: String,
    pub cluster: usize,
}

/// Clustering parameters.
#[derive(Debug, Clone)]
pub struct KmeansConfig {
    pub k: usize,
    pub metric: Metric,
    pub max_iter: usize,
    /// Convergence threshold on per-centroid movement, measured with the
    /// configured metric.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        KmeansConfig {
            k: 8,
            metric: Metric::Euclidean,
            max_iter: 10,
            epsilon: 1e-4,
            seed: 0,
        }
    }
}

fn cluster_key(cluster: usize) -> String {
    // zero-padded so lexicographic shuffle order equals numeric order
    format!("{cluster:06}")
}

/// Mapper for one Lloyd iteration: assigns a vector to its nearest
/// centroid and forwards the components for the mean update.
struct AssignMapper {
    centroids: Arc<Vec<Vec<f64>>>,
    metric: Metric,
    /// When true, emit (cluster, key) pairs for the final assignment pass
    /// instead of (cluster, cost-and-components).
    emit_keys: bool,
}

impl gridrun::Mapper for AssignMapper {
    fn map(&self, _ctx: &MapContext<'_>, record: &str, out: &mut PairSink) -> Result<(), JobError> {
        let (key, components) = record
            .split_once('\t')
            .ok_or_else(|| JobError::new("vector line has no tab"))?;
        let values: Result<Vec<f64>, _> = components
            .split(',')
            .map(|f| f.parse::<f64>().map_err(|_| ()))
            .collect();
        let values = values.map_err(|_| JobError::new("vector line has a malformed component"))?;
        let (cluster, cost) = assign_with_cost(&values, &self.centroids, self.metric)
            .map_err(|e| JobError::new(e.to_string()))?;
        if self.emit_keys {
            out.emit(cluster_key(cluster), key);
        } else {
            out.emit(cluster_key(cluster), format!("{cost},{components}"));
        }
        Ok(())
    }
}

/// Reducer for one Lloyd iteration: folds (cost, components) values into
/// the cluster's member count, cost sum and mean vector. Values arrive
/// sorted, so the floating-point fold is reproducible.
struct CentroidReducer {
    dim: usize,
}

impl gridrun::Reducer for CentroidReducer {
    fn reduce(&self, key: &str, values: &[String], out: &mut RecordSink) -> Result<(), JobError> {
        let mut count = 0u64;
        let mut cost = 0.0f64;
        let mut sums = vec![0.0f64; self.dim];
        for value in values {
            let (cost_field, components) = value
                .split_once(',')
                .ok_or_else(|| JobError::new("update value has no cost field"))?;
            cost += cost_field
                .parse::<f64>()
                .map_err(|_| JobError::new("malformed cost field"))?;
            let mut n = 0;
            for (slot, field) in sums.iter_mut().zip(components.split(',')) {
                *slot += field
                    .parse::<f64>()
                    .map_err(|_| JobError::new("malformed component"))?;
                n += 1;
            }
            if n != self.dim || components.split(',').count() != self.dim {
                return Err(JobError::new(format!(
                    "expected {} components, found {}",
                    self.dim,
                    components.split(',').count()
                )));
            }
            count += 1;
        }
        let cluster: usize = key
            .parse()
            .map_err(|_| JobError::new("non-numeric cluster key"))?;
        let mut record = format!("{cluster}\t{count}\t{cost}\t");
        for (i, sum) in sums.iter().enumerate() {
            if i > 0 {
                record.push(',');
            }
            record.push_str(&format!("{}", sum / count as f64));
        }
        out.emit(record);
        Ok(())
    }
}

/// Identity reducer for the final assignment pass: one `cluster<TAB>key`
/// line per member.
struct AssignmentReducer;

impl gridrun::Reducer for AssignmentReducer {
    fn reduce(&self, key: &str, values: &[String], out: &mut RecordSink) -> Result<(), JobError> {
        let cluster: usize = key
            .parse()
            .map_err(|_| JobError::new("non-numeric cluster key"))?;
        for vector_key in values {
            out.emit(format!("{cluster}\t{vector_key}"));
        }
        Ok(())
    }
}

fn vector_file_dim(input: &Path) -> Result<usize, KmeansError> {
    let file = File::open(input).map_err(io_err(input))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(io_err(input))?;
    let line = line.trim_end_matches(['\n', '\r']);
    let rest = line
        .split_once('\t')
        .ok_or_else(|| KmeansError::Parse {
            path: input.to_path_buf(),
            line: 1,
            message: "empty vector file or missing tab".into(),
        })?
        .1;
    Ok(rest.split(',').count())
}

/// Runs K-means with seeded random initialization from the input samples.
/// Writes the clustered-points file (`clusterId<TAB>key`) to
/// `clustered_out` and returns the model.
pub fn run_kmeans(
    input: &Path,
    clustered_out: &Path,
    work_dir: &Path,
    config: &KmeansConfig,
    engine: &EngineConfig,
) -> Result<ClusterModel, KmeansError> {
    let centroids = init_centroids(input, config.k, config.seed)?;
    run_kmeans_with_centroids(input, clustered_out, work_dir, centroids, config, engine)
}

/// Runs the Lloyd loop from explicitly provided initial centroids.
pub fn run_kmeans_with_centroids(
    input: &Path,
    clustered_out: &Path,
    work_dir: &Path,
    initial_centroids: Vec<Vec<f64>>,
    config: &KmeansConfig,
    engine: &EngineConfig,
) -> Result<ClusterModel, KmeansError> {
    if config.max_iter < 1 {
        return Err(KmeansError::InvalidParams("max_iter must be >= 1".into()));
    }
    if config.epsilon.is_nan() || config.epsilon < 0.0 {
        return Err(KmeansError::InvalidParams("epsilon must be >= 0".into()));
    }
    if initial_centroids.len() != config.k {
        return Err(KmeansError::InvalidParams(format!(
            "{} initial centroids for k={}",
            initial_centroids.len(),
            config.k
        )));
    }
    let dim = vector_file_dim(input)?;
    std::fs::create_dir_all(work_dir).map_err(io_err(work_dir))?;

    let mut centroids = initial_centroids;
    let mut cost_trace = Vec::new();
    let mut empty_events = 0u64;
    let mut converged = false;
    let mut iterations_run = 0usize;

    for iteration in 0..config.max_iter {
        let output_dir = work_dir.join(format!("iter-{iteration:03}"));
        let current = Arc::new(centroids.clone());
        let spec = JobSpec::new(
            vec![input.to_path_buf()],
            AssignMapper {
                centroids: Arc::clone(&current),
                metric: config.metric,
                emit_keys: false,
            },
            CentroidReducer { dim },
            &engine.scratch_dir,
            &output_dir,
        )
        .partitions(engine.partitions)
        .workers(engine.workers);
        let output = run_job(&spec)?;

        let mut updates: Vec<Option<(u64, f64, Vec<f64>)>> = vec![None; config.k];
        for shard in &output.shards {
            let body = std::fs::read_to_string(shard).map_err(io_err(shard))?;
            for (idx, line) in body.lines().enumerate() {
                let line_no = idx as u64 + 1;
                let parse_err = |message: String| KmeansError::Parse {
                    path: shard.clone(),
                    line: line_no,
                    message,
                };
                let mut fields = line.split('\t');
                let cluster: usize = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| parse_err("bad cluster field".into()))?;
                let count: u64 = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| parse_err("bad count field".into()))?;
                let cost: f64 = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| parse_err("bad cost field".into()))?;
                let mean = fields
                    .next()
                    .ok_or_else(|| parse_err("missing mean field".into()))
                    .and_then(|f| {
                        parse_components(f, shard, line_no).map_err(KmeansError::Vecstore)
                    })?;
                if cluster >= config.k {
                    return Err(parse_err(format!("cluster {cluster} out of range")));
                }
                updates[cluster] = Some((count, cost, mean));
            }
        }

        let mut new_centroids = Vec::with_capacity(config.k);
        let mut total_cost = 0.0;
        for (cluster, update) in updates.into_iter().enumerate() {
            match update {
                Some((_count, cost, mean)) => {
                    total_cost += cost;
                    new_centroids.push(mean);
                }
                None => {
                    empty_events += 1;
                    new_centroids.push(centroids[cluster].clone());
                }
            }
        }
        cost_trace.push(total_cost);
        iterations_run = iteration + 1;

        let mut max_movement = 0.0f64;
        for (old, new) in centroids.iter().zip(&new_centroids) {
            let moved = distance(config.metric, old, new)?;
            if moved > max_movement {
                max_movement = moved;
            }
        }
        centroids = new_centroids;
        if max_movement < config.epsilon {
            converged = true;
            break;
        }
    }

    // Final exhaustive assignment against the converged centroids.
    let assign_dir = work_dir.join("assign");
    let spec = JobSpec::new(
        vec![input.to_path_buf()],
        AssignMapper {
            centroids: Arc::new(centroids.clone()),
            metric: config.metric,
            emit_keys: true,
        },
        AssignmentReducer,
        &engine.scratch_dir,
        &assign_dir,
    )
    .partitions(engine.partitions)
    .workers(engine.workers);
    let output = run_job(&spec)?;
    concat_shards(&output.shards, clustered_out)?;

    Ok(ClusterModel {
        k: config.k,
        metric: config.metric,
        centroids,
        cost_trace,
        iterations_run,
        converged,
        empty_cluster_events: empty_events,
    })
}

fn concat_shards(shards: &[PathBuf], out: &Path) -> Result<(), KmeansError> {
    let file = File::create(out).map_err(io_err(out))?;
    let mut writer = BufWriter::new(file);
    for shard in shards {
        let mut reader = File::open(shard).map_err(io_err(shard))?;
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf).map_err(io_err(shard))?;
        writer.write_all(&buf).map_err(io_err(out))?;
    }
    writer.flush().map_err(io_err(out))
}

/// Writes the centroids file: `clusterId<TAB>v1,...,vC`.
pub fn write_centroids(path: &Path, centroids: &[Vec<f64>]) -> Result<(), KmeansError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for (cluster, centroid) in centroids.iter().enumerate() {
        write!(w, "{cluster}\t").map_err(io_err(path))?;
        for (i, value) in centroid.iter().enumerate() {
            if i > 0 {
                write!(w, ",").map_err(io_err(path))?;
            }
            write!(w, "{value}").map_err(io_err(path))?;
        }
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a clustered-points file back into assignments.
pub fn read_assignments(path: &Path) -> Result<Vec<Assignment>, KmeansError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut assignments = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let (cluster, key) = line.split_once('\t').ok_or_else(|| KmeansError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: "missing tab".into(),
        })?;
        let cluster: usize = cluster.parse().map_err(|_| KmeansError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("bad cluster id {cluster:?}"),
        })?;
        assignments.push(Assignment {
            key: key.to_string(),
            cluster,
        });
    }
    Ok(assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecstore::{canonical_key, write_vectors};

    fn kv(values: &[f64]) -> KeyedVector {
        KeyedVector {
            key: canonical_key(values).unwrap(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn distance_hand_checkable_examples() {
        let d = |m, x: &[f64], y: &[f64]| distance(m, x, y).unwrap();
        assert_eq!(d(Metric::Euclidean, &[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(d(Metric::SquaredEuclidean, &[0.0, 0.0], &[3.0, 4.0]), 25.0);
        assert_eq!(d(Metric::Manhattan, &[1.0, 2.0], &[4.0, -2.0]), 7.0);
        assert!((d(Metric::Cosine, &[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
        let x = [0.3, -1.7, 2.5];
        assert!(d(Metric::Tanimoto, &x, &x).abs() < 1e-12);
        // Tanimoto (2,0) vs (1,0): 1 - 2/(4+1-2) = 1/3
        assert!((d(Metric::Tanimoto, &[2.0, 0.0], &[1.0, 0.0]) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn distances_are_symmetric_nonnegative_and_zero_on_self() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
            for metric in Metric::ALL {
                let dxy = distance(metric, &x, &y).unwrap();
                let dyx = distance(metric, &y, &x).unwrap();
                assert!(dxy >= 0.0);
                assert!((dxy - dyx).abs() < 1e-12, "{metric} not symmetric");
                assert!(distance(metric, &x, &x).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let zero = [0.0, 0.0];
        let unit = [1.0, 0.0];
        assert!(matches!(
            distance(Metric::Cosine, &zero, &unit),
            Err(KmeansError::Degenerate { .. })
        ));
        assert!(matches!(
            distance(Metric::Cosine, &unit, &zero),
            Err(KmeansError::Degenerate { .. })
        ));
        assert!(matches!(
            distance(Metric::Tanimoto, &zero, &zero),
            Err(KmeansError::Degenerate { .. })
        ));
        // one zero operand is fine for Tanimoto
        assert_eq!(distance(Metric::Tanimoto, &zero, &unit).unwrap(), 1.0);
        assert!(matches!(
            distance(Metric::Euclidean, &[1.0], &[1.0, 2.0]),
            Err(KmeansError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn assign_prefers_lowest_index_on_ties() {
        let centroids = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        // equidistant from both
        assert_eq!(assign(&[0.0, 5.0], &centroids, Metric::Euclidean).unwrap(), 0);

        let centroids = vec![vec![9.0, 9.0], vec![2.0, 2.0], vec![2.0, 2.0]];
        assert_eq!(assign(&[2.0, 2.0], &centroids, Metric::Euclidean).unwrap(), 1);
    }

    #[test]
    fn assign_exact_centroid_match() {
        let centroids: Vec<Vec<f64>> =
            (0..5).map(|i| vec![i as f64, -(i as f64)]).collect();
        for metric in [Metric::Euclidean, Metric::Manhattan, Metric::SquaredEuclidean] {
            assert_eq!(assign(&[3.0, -3.0], &centroids, metric).unwrap(), 3);
        }
        let origin_free = vec![vec![1.0, 0.0], vec![5.0, 0.0]];
        assert_eq!(
            assign(&[0.0, 0.0], &origin_free, Metric::Euclidean).unwrap(),
            0
        );
    }

    #[test]
    fn update_means_and_empty_cluster_rule() {
        let data = vec![kv(&[0.0, 0.0]), kv(&[2.0, 2.0]), kv(&[7.0, 7.0])];
        let previous = vec![vec![0.0, 0.0], vec![9.0, 9.0], vec![50.0, 50.0]];
        let (centroids, empty) =
            update_centroids(&data, &[0, 0, 1], 3, &previous).unwrap();
        assert_eq!(centroids[0], vec![1.0, 1.0]);
        assert_eq!(centroids[1], vec![7.0, 7.0]); // singleton
        assert_eq!(centroids[2], vec![50.0, 50.0]); // empty keeps previous
        assert_eq!(empty, 1);
    }

    #[test]
    fn reservoir_init_is_seeded_and_distinct() {
        let data: Vec<KeyedVector> = (0..30)
            .map(|i| kv(&[i as f64, (i * i) as f64]))
            .collect();
        let a = init_centroids_from_vectors(&data, 5, 11).unwrap();
        let b = init_centroids_from_vectors(&data, 5, 11).unwrap();
        assert_eq!(a, b);
        let c = init_centroids_from_vectors(&data, 5, 12).unwrap();
        assert_ne!(a, c);

        // k = distinct count: centroids are a permutation of the points
        let mut all = init_centroids_from_vectors(&data, 30, 7).unwrap();
        all.sort_by(|x, y| x[0].total_cmp(&y[0]));
        let expected: Vec<Vec<f64>> = data.iter().map(|kvec| kvec.values.clone()).collect();
        assert_eq!(all, expected);

        // duplicates do not count as distinct
        let dupes = vec![kv(&[1.0]), kv(&[1.0]), kv(&[2.0])];
        assert!(matches!(
            init_centroids_from_vectors(&dupes, 3, 0),
            Err(KmeansError::NotEnoughDistinct { need: 3, have: 2 })
        ));
    }

    fn engine(dir: &Path) -> EngineConfig {
        EngineConfig {
            workers: 2,
            partitions: 3,
            scratch_dir: dir.join("scratch"),
        }
    }

    #[test]
    fn hand_executed_lloyd_example() {
        let dir = tempfile::tempdir().unwrap();
        let data = vec![
            kv(&[0.0, 0.0]),
            kv(&[0.0, 1.0]),
            kv(&[10.0, 10.0]),
            kv(&[10.0, 11.0]),
        ];
        let input = dir.path().join("vectors.tsv");
        write_vectors(&input, &data).unwrap();

        let config = KmeansConfig {
            k: 2,
            metric: Metric::Euclidean,
            max_iter: 10,
            epsilon: 1e-4,
            seed: 0,
        };
        let model = run_kmeans_with_centroids(
            &input,
            &dir.path().join("clustered.tsv"),
            &dir.path().join("work"),
            vec![vec![0.0, 0.0], vec![10.0, 10.0]],
            &config,
            &engine(dir.path()),
        )
        .unwrap();

        assert!(model.converged);
        assert_eq!(model.centroids[0], vec![0.0, 0.5]);
        assert_eq!(model.centroids[1], vec![10.0, 10.5]);

        let assignments = read_assignments(&dir.path().join("clustered.tsv")).unwrap();
        assert_eq!(assignments.len(), 4);
        let cluster_of = |values: &[f64]| {
            let key = canonical_key(values).unwrap();
            assignments
                .iter()
                .find(|a| a.key == key)
                .map(|a| a.cluster)
                .unwrap()
        };
        assert_eq!(cluster_of(&[0.0, 0.0]), cluster_of(&[0.0, 1.0]));
        assert_eq!(cluster_of(&[10.0, 10.0]), cluster_of(&[10.0, 11.0]));
        assert_ne!(cluster_of(&[0.0, 0.0]), cluster_of(&[10.0, 10.0]));
    }

    #[test]
    fn k_equals_n_converges_immediately_with_zero_cost() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<KeyedVector> = (0..6).map(|i| kv(&[i as f64, 2.0 * i as f64])).collect();
        let input = dir.path().join("vectors.tsv");
        write_vectors(&input, &data).unwrap();

        let config = KmeansConfig {
            k: 6,
            metric: Metric::Euclidean,
            max_iter: 10,
            epsilon: 1e-4,
            seed: 4,
        };
        let model = run_kmeans(
            &input,
            &dir.path().join("clustered.tsv"),
            &dir.path().join("work"),
            &config,
            &engine(dir.path()),
        )
        .unwrap();
        assert!(model.converged);
        assert_eq!(model.iterations_run, 1);
        assert_eq!(model.cost_trace, vec![0.0]);
    }

    #[test]
    fn update_jobs_are_permutation_invariant() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data: Vec<KeyedVector> = (0..200)
            .map(|i| {
                kv(&[
                    (i % 17) as f64 + 0.25,
                    (i % 5) as f64 - 2.0,
                    (i % 11) as f64,
                ])
            })
            .collect();

        let init = vec![
            vec![0.0, 0.0, 0.0],
            vec![8.0, 1.0, 5.0],
            vec![16.0, -2.0, 10.0],
        ];
        let config = KmeansConfig {
            k: 3,
            metric: Metric::SquaredEuclidean,
            max_iter: 5,
            epsilon: 0.0,
            seed: 0,
        };

        let mut results = Vec::new();
        for run in 0..2 {
            if run == 1 {
                data.shuffle(&mut rng);
            }
            let input = dir.path().join(format!("vectors-{run}.tsv"));
            write_vectors(&input, &data).unwrap();
            let model = run_kmeans_with_centroids(
                &input,
                &dir.path().join(format!("clustered-{run}.tsv")),
                &dir.path().join(format!("work-{run}")),
                init.clone(),
                &config,
                &engine(dir.path()),
            )
            .unwrap();
            results.push((model.centroids, model.cost_trace));
        }
        assert_eq!(results[0], results[1]);
    }

    #[test]
    fn every_metric_terminates_with_an_exclusive_assignment() {
        let dir = tempfile::tempdir().unwrap();
        // strictly positive values keep cosine/tanimoto well defined
        let data: Vec<KeyedVector> = (0..60)
            .map(|i| {
                kv(&[
                    1.0 + (i % 12) as f64,
                    2.0 + (i % 7) as f64,
                    0.5 + (i % 5) as f64,
                ])
            })
            .collect();
        let mut distinct: Vec<KeyedVector> = Vec::new();
        for kvec in data {
            if !distinct.iter().any(|d| d.key == kvec.key) {
                distinct.push(kvec);
            }
        }
        let input = dir.path().join("vectors.tsv");
        write_vectors(&input, &distinct).unwrap();

        for metric in Metric::ALL {
            let clustered = dir.path().join(format!("clustered-{metric}.tsv"));
            let model = run_kmeans(
                &input,
                &clustered,
                &dir.path().join(format!("work-{metric}")),
                &KmeansConfig {
                    k: 4,
                    metric,
                    max_iter: 6,
                    epsilon: 1e-6,
                    seed: 2,
                },
                &engine(dir.path()),
            )
            .unwrap();
            assert!(model.iterations_run <= 6, "{metric}");
            assert_eq!(model.cost_trace.len(), model.iterations_run, "{metric}");

            let assignments = read_assignments(&clustered).unwrap();
            assert_eq!(assignments.len(), distinct.len(), "{metric}");
            let mut keys: Vec<&str> = assignments.iter().map(|a| a.key.as_str()).collect();
            keys.sort_unstable();
            keys.dedup();
            assert_eq!(keys.len(), distinct.len(), "{metric}: key assigned twice");
            assert!(assignments.iter().all(|a| a.cluster < 4), "{metric}");
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for metric in Metric::ALL {
            assert_eq!(metric.name().parse::<Metric>().unwrap(), metric);
        }
        assert_eq!(
            "SquaredEuclidean".parse::<Metric>().unwrap(),
            Metric::SquaredEuclidean
        );
        assert!("chebyshev".parse::<Metric>().is_err());
    }
}
