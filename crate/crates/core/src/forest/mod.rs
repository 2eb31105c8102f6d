//! Random forest classifier with bootstrap bagging and out-of-bag error
//! estimation.

mod metrics;
mod tree;

pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};
pub use tree::Node;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::ClassId;
use gridrun::stable_hash;

/// The pipeline is an 8-class problem throughout.
pub const CLASS_COUNT: usize = 8;

/// Which features the forest consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Only the K-means cluster id (the literal pipeline input).
    ClusterOnly,
    /// Only the raw channel vector.
    RawOnly,
    /// Cluster id alongside the raw channels.
    ClusterRaw,
}

impl FeatureMode {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMode::ClusterOnly => "cluster",
            FeatureMode::RawOnly => "raw",
            FeatureMode::ClusterRaw => "cluster+raw",
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = ForestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cluster" | "cluster-only" => Ok(FeatureMode::ClusterOnly),
            "raw" | "raw-only" => Ok(FeatureMode::RawOnly),
            "cluster+raw" | "cluster-raw" => Ok(FeatureMode::ClusterRaw),
            other => Err(ForestError::InvalidParams(format!(
                "unknown feature mode {other:?} (expected cluster, raw or cluster+raw)"
            ))),
        }
    }
}

/// Feature layout shared by every row of a training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSchema {
    /// Number of cluster categories when the categorical cluster feature
    /// is present.
    pub cluster_categories: Option<usize>,
    /// Number of numeric channel features.
    pub raw_dims: usize,
}

impl FeatureSchema {
    pub fn total_features(&self) -> usize {
        usize::from(self.cluster_categories.is_some()) + self.raw_dims
    }
}

/// Features of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFeatures {
    pub cluster: Option<u16>,
    pub raw: Vec<f64>,
}

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub features: RowFeatures,
    pub label: ClassId,
}

/// Forest hyperparameters. The defaults follow the standard recipe:
/// 100 trees, sqrt(M) features per split, nodes grown to purity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    /// Features sampled per split; defaults to floor(sqrt(M)).
    pub features_per_split: Option<usize>,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            features_per_split: None,
            min_node_size: 1,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("row {row}: {message}")]
    LayoutMismatch { row: usize, message: String },

    #[error("confusion matrix has no entries")]
    EmptyConfusionMatrix,

    #[error("model was trained on {expected} rows, got {got}")]
    RowCountMismatch { expected: usize, got: usize },

    #[error("{path}:{line}: {message}")]
    ModelParse {
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

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ForestError + '_ {
    move |source| ForestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One bagged tree: its grown root, the seed that drove it, and the
/// bootstrap multiset it was trained on (sorted, with repeats).
#[derive(Debug, Clone, PartialEq)]
pub struct ForestTree {
    pub root: Node,
    pub seed: u64,
    pub in_bag: Vec<usize>,
}

impl ForestTree {
    /// True-by-index mask of rows this tree never saw.
    pub fn oob_mask(&self, n_rows: usize) -> Vec<bool> {
        let mut mask = vec![true; n_rows];
        for &i in &self.in_bag {
            mask[i] = false;
        }
        mask
    }
}

/// A trained forest plus everything needed to reproduce and evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub schema: FeatureSchema,
    pub trees: Vec<ForestTree>,
    pub features_per_split: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub master_seed: u64,
    pub n_rows: usize,
}

/// Draws n samples with replacement from 0..n. Returns the in-bag draws
/// (in draw order) and the sorted set of never-drawn (out-of-bag) indices.
pub fn bootstrap_sample(n: usize, tree_seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(n >= 1, "bootstrap needs at least one row");
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
    let mut drawn = vec![false; n];
    let in_bag: Vec<usize> = (0..n)
        .map(|_| {
            let index = rng.gen_range(0..n);
            drawn[index] = true;
            index
        })
        .collect();
    let oob = (0..n).filter(|&i| !drawn[i]).collect();
    (in_bag, oob)
}

fn tree_seed(master_seed: u64, tree_index: usize) -> u64 {
    stable_hash(&format!("{master_seed}/{tree_index}"))
}

fn validate_rows(rows: &[TrainRow], schema: &FeatureSchema) -> Result<(), ForestError> {
    if rows.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    for (index, row) in rows.iter().enumerate() {
        match (schema.cluster_categories, row.features.cluster) {
            (Some(categories), Some(cluster)) => {
                if usize::from(cluster) >= categories {
                    return Err(ForestError::LayoutMismatch {
                        row: index,
                        message: format!("cluster {cluster} out of {categories} categories"),
                    });
                }
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(ForestError::LayoutMismatch {
                    row: index,
                    message: "missing cluster feature".into(),
                })
            }
            (None, Some(_)) => {
                return Err(ForestError::LayoutMismatch {
                    row: index,
                    message: "unexpected cluster feature".into(),
                })
            }
        }
        if row.features.raw.len() != schema.raw_dims {
            return Err(ForestError::LayoutMismatch {
                row: index,
                message: format!(
                    "expected {} raw features, found {}",
                    schema.raw_dims,
                    row.features.raw.len()
                ),
            });
        }
        if let Some(dim) = row.features.raw.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::LayoutMismatch {
                row: index,
                message: format!("raw feature {dim} is not finite"),
            });
        }
    }
    Ok(())
}

fn validate_features(
    features: &RowFeatures,
    schema: &FeatureSchema,
) -> Result<(), ForestError> {
    let row = std::slice::from_ref(features);
    // reuse the row validator with a placeholder label
    let probe = TrainRow {
        features: row[0].clone(),
        label: ClassId::new(1).expect("1 is a valid class"),
    };
    validate_rows(std::slice::from_ref(&probe), schema)
}

/// Trains T trees, each on its own bootstrap sample, with per-tree seeds
/// derived from the master seed. Tree construction runs in parallel; the
/// result is independent of scheduling.
pub fn train_forest(
    rows: &[TrainRow],
    schema: &FeatureSchema,
    params: &ForestParams,
) -> Result<ForestModel, ForestError> {
    validate_rows(rows, schema)?;
    if params.trees < 1 {
        return Err(ForestError::InvalidParams("trees must be >= 1".into()));
    }
    let total = schema.total_features();
    if total == 0 {
        return Err(ForestError::InvalidParams(
            "schema has no features".into(),
        ));
    }
    let features_per_split = match params.features_per_split {
        Some(m) => {
            if m < 1 || m > total {
                return Err(ForestError::InvalidParams(format!(
                    "features_per_split {m} outside 1..={total}"
                )));
            }
            m
        }
        None => ((total as f64).sqrt().floor() as usize).max(1),
    };
    if params.min_node_size < 1 {
        return Err(ForestError::InvalidParams(
            "min_node_size must be >= 1".into(),
        ));
    }

    let settings = tree::GrowSettings {
        features_per_split,
        min_node_size: params.min_node_size,
        max_depth: params.max_depth,
    };
    let n = rows.len();
    let trees: Vec<ForestTree> = (0..params.trees)
        .into_par_iter()
        .map(|index| {
            let seed = tree_seed(params.seed, index);
            let (in_bag, _oob) = bootstrap_sample(n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&format!("{seed}/split")));
            let root = tree::grow(rows, schema, &in_bag, 0, &settings, &mut rng);
            let mut in_bag = in_bag;
            in_bag.sort_unstable();
            ForestTree { root, seed, in_bag }
        })
        .collect();

    Ok(ForestModel {
        schema: *schema,
        trees,
        features_per_split,
        min_node_size: params.min_node_size,
        max_depth: params.max_depth,
        master_seed: params.seed,
        n_rows: n,
    })
}

fn majority_vote(votes: &[u64; CLASS_COUNT]) -> ClassId {
    let mut best = 0usize;
    for (index, &count) in votes.iter().enumerate() {
        if count > votes[best] {
            best = index;
        }
    }
    ClassId::new(best as u8 + 1).expect("index below CLASS_COUNT")
}

/// Majority vote over all trees; ties go to the lowest class id.
pub fn predict(model: &ForestModel, features: &RowFeatures) -> Result<ClassId, ForestError> {
    validate_features(features, &model.schema)?;
    let mut votes = [0u64; CLASS_COUNT];
    for tree in &model.trees {
        votes[tree.root.predict(features).index()] += 1;
    }
    Ok(majority_vote(&votes))
}

/// Out-of-bag evaluation result.
#[derive(Debug, Clone)]
pub struct OobEvaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Rows no tree left out of its bootstrap; excluded from the matrix.
    pub skipped_rows: u64,
}

/// Indices of the trees allowed to vote on `row_index` out-of-bag, i.e.
/// trees whose bootstrap multiset excludes that row.
pub fn oob_voters(model: &ForestModel, row_index: usize) -> Vec<usize> {
    model
        .trees
        .iter()
        .enumerate()
        .filter(|(_, tree)| tree.in_bag.binary_search(&row_index).is_err())
        .map(|(index, _)| index)
        .collect()
}

/// Classifies every row by majority vote over only the trees that
/// excluded it from training, then summarizes the resulting confusion
/// matrix.
pub fn oob_evaluate(
    model: &ForestModel,
    rows: &[TrainRow],
) -> Result<OobEvaluation, ForestError> {
    validate_rows(rows, &model.schema)?;
    if rows.len() != model.n_rows {
        return Err(ForestError::RowCountMismatch {
            expected: model.n_rows,
            got: rows.len(),
        });
    }

    let masks: Vec<Vec<bool>> = model
        .trees
        .iter()
        .map(|tree| tree.oob_mask(rows.len()))
        .collect();

    let mut confusion = ConfusionMatrix::new(CLASS_COUNT);
    let mut skipped = 0u64;
    for (index, row) in rows.iter().enumerate() {
        let mut votes = [0u64; CLASS_COUNT];
        let mut any = false;
        for (tree, mask) in model.trees.iter().zip(&masks) {
            if mask[index] {
                votes[tree.root.predict(&row.features).index()] += 1;
                any = true;
            }
        }
        if !any {
            skipped += 1;
            continue;
        }
        confusion.increment(row.label.index(), majority_vote(&votes).index());
    }

    let metrics = compute_metrics(&confusion)?;
    Ok(OobEvaluation {
        confusion,
        metrics,
        skipped_rows: skipped,
    })
}

const MODEL_MAGIC: &str = "emopipe-forest v1";

/// Persists the model as a versioned text file: a header, then one
/// section per tree with its seed, bootstrap multiset and preorder node
/// list.
pub fn save_model(path: &Path, model: &ForestModel) -> Result<(), ForestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let fmt_opt = |v: Option<usize>| v.map_or("-".to_string(), |x| x.to_string());
    writeln!(w, "{MODEL_MAGIC}").map_err(io_err(path))?;
    writeln!(
        w,
        "schema cluster={} raw={}",
        fmt_opt(model.schema.cluster_categories),
        model.schema.raw_dims
    )
    .map_err(io_err(path))?;
    writeln!(
        w,
        "params trees={} features_per_split={} min_node_size={} max_depth={} seed={} rows={}",
        model.trees.len(),
        model.features_per_split,
        model.min_node_size,
        fmt_opt(model.max_depth),
        model.master_seed,
        model.n_rows
    )
    .map_err(io_err(path))?;

    for (index, tree) in model.trees.iter().enumerate() {
        writeln!(w, "tree {index} seed={}", tree.seed).map_err(io_err(path))?;
        // in-bag multiset as index:count pairs
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for &i in &tree.in_bag {
            match pairs.last_mut() {
                Some((last, count)) if *last == i => *count += 1,
                _ => pairs.push((i, 1)),
            }
        }
        let rendered: Vec<String> = pairs
            .iter()
            .map(|(index, count)| format!("{index}:{count}"))
            .collect();
        writeln!(w, "in_bag {}", rendered.join(",")).map_err(io_err(path))?;
        writeln!(w, "nodes {}", tree.root.node_count()).map_err(io_err(path))?;
        let mut body = String::new();
        tree::write_nodes(&tree.root, &mut body);
        w.write_all(body.as_bytes()).map_err(io_err(path))?;
        writeln!(w, "end").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Loads a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<ForestModel, ForestError> {
    let body = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = body.lines().enumerate().peekable();
    let mut next = |expect: &str| -> Result<(u64, &str), ForestError> {
        lines
            .next()
            .map(|(i, line)| (i as u64 + 1, line))
            .ok_or_else(|| ForestError::ModelParse {
                path: path.to_path_buf(),
                line: body.lines().count() as u64,
                message: format!("unexpected end of file, expected {expect}"),
            })
    };
    let parse_err = |line: u64, message: String| ForestError::ModelParse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let (line_no, magic) = next("header")?;
    if magic != MODEL_MAGIC {
        return Err(parse_err(line_no, format!("unrecognized header {magic:?}")));
    }

    let (line_no, schema_line) = next("schema")?;
    let schema_fields = parse_kv_line(schema_line, "schema")
        .map_err(|m| parse_err(line_no, m))?;
    let cluster_categories = match schema_fields.get("cluster").map(String::as_str) {
        Some("-") => None,
        Some(v) => Some(v.parse::<usize>().map_err(|_| {
            parse_err(line_no, format!("bad cluster category count {v:?}"))
        })?),
        None => return Err(parse_err(line_no, "schema is missing cluster=".into())),
    };
    let raw_dims: usize = schema_fields
        .get("raw")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(line_no, "schema is missing raw=".into()))?;
    let schema = FeatureSchema {
        cluster_categories,
        raw_dims,
    };

    let (line_no, params_line) = next("params")?;
    let params = parse_kv_line(params_line, "params").map_err(|m| parse_err(line_no, m))?;
    let get_usize = |key: &str| -> Result<usize, ForestError> {
        params
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(line_no, format!("params is missing {key}=")))
    };
    let tree_count = get_usize("trees")?;
    let features_per_split = get_usize("features_per_split")?;
    let min_node_size = get_usize("min_node_size")?;
    let n_rows = get_usize("rows")?;
    let master_seed: u64 = params
        .get("seed")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(line_no, "params is missing seed=".into()))?;
    let max_depth = match params.get("max_depth").map(String::as_str) {
        Some("-") => None,
        Some(v) => Some(
            v.parse::<usize>()
                .map_err(|_| parse_err(line_no, format!("bad max_depth {v:?}")))?,
        ),
        None => return Err(parse_err(line_no, "params is missing max_depth=".into())),
    };

    let mut trees = Vec::with_capacity(tree_count);
    for expected_index in 0..tree_count {
        let (line_no, tree_line) = next("tree header")?;
        let fields: Vec<&str> = tree_line.split_whitespace().collect();
        let (index, seed) = match fields.as_slice() {
            ["tree", index, seed_field] if seed_field.starts_with("seed=") => {
                let index: usize = index
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad tree index in {tree_line:?}")))?;
                let seed: u64 = seed_field["seed=".len()..]
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad seed in {tree_line:?}")))?;
                (index, seed)
            }
            _ => return Err(parse_err(line_no, format!("bad tree header {tree_line:?}"))),
        };
        if index != expected_index {
            return Err(parse_err(
                line_no,
                format!("tree {index} out of order, expected {expected_index}"),
            ));
        }

        let (line_no, in_bag_line) = next("in_bag")?;
        let rest = in_bag_line
            .strip_prefix("in_bag ")
            .ok_or_else(|| parse_err(line_no, format!("expected in_bag line, got {in_bag_line:?}")))?;
        let mut in_bag = Vec::new();
        for pair in rest.split(',').filter(|p| !p.is_empty()) {
            let (index, count) = pair
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("bad in_bag pair {pair:?}")))?;
            let index: usize = index
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad in_bag index {pair:?}")))?;
            let count: usize = count
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad in_bag count {pair:?}")))?;
            in_bag.extend(std::iter::repeat_n(index, count));
        }

        let (line_no, nodes_line) = next("nodes")?;
        let declared: usize = nodes_line
            .strip_prefix("nodes ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(line_no, format!("bad nodes line {nodes_line:?}")))?;

        let mut node_lines = Vec::with_capacity(declared);
        for _ in 0..declared {
            let (_, line) = next("node")?;
            node_lines.push(line);
        }
        let root = tree::parse_nodes(&mut node_lines.into_iter())
            .map_err(|m| parse_err(line_no, m))?;
        if root.node_count() != declared {
            return Err(parse_err(
                line_no,
                format!(
                    "tree declares {declared} nodes but parsed {}",
                    root.node_count()
                ),
            ));
        }

        let (line_no, end_line) = next("end")?;
        if end_line != "end" {
            return Err(parse_err(line_no, format!("expected end, got {end_line:?}")));
        }

        trees.push(ForestTree { root, seed, in_bag });
    }

    Ok(ForestModel {
        schema,
        trees,
        features_per_split,
        min_node_size,
        max_depth,
        master_seed,
        n_rows,
    })
}

fn parse_kv_line(
    line: &str,
    prefix: &str,
) -> Result<std::collections::HashMap<String, String>, String> {
    let rest = line
        .strip_prefix(prefix)
        .ok_or_else(|| format!("expected {prefix} line, got {line:?}"))?;
    let mut map = std::collections::HashMap::new();
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("bad field {field:?} in {line:?}"))?;
        map.insert(key.to_string(), value.to_string());
    }
    Ok(map)
}
