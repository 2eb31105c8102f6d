//! Stage-oriented orchestration: wires the modules into the full
//! normalize -> vectorize -> cluster -> join -> train -> evaluate chain
//! with fixed artifact names so stages compose without flag plumbing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::config::{DatasetSource, PipelineConfig};
use crate::dataset::{
    encode_label, generate_synthetic, load_raw, load_signals, normalize, write_ratings, write_raw,
};
use crate::forest::{
    self, compute_metrics, load_model, oob_evaluate, save_model, train_forest, FeatureMode,
    FeatureSchema, Metrics, RowFeatures, TrainRow, CLASS_COUNT,
};
use crate::joiner::{mr_join, read_joined, JoinOptions};
use crate::kmeans::{run_kmeans, write_centroids};
use crate::vecstore::{canonical_key, read_vectors, vectorize, write_vectors};

/// A pipeline stage. `All` runs the full chain in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Normalize,
    Vectorize,
    Kmeans,
    Labels,
    Join,
    Train,
    Evaluate,
    Report,
    All,
}

impl Stage {
    pub const ORDER: [Stage; 9] = [
        Stage::Gen,
        Stage::Normalize,
        Stage::Vectorize,
        Stage::Kmeans,
        Stage::Labels,
        Stage::Join,
        Stage::Train,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Normalize => "normalize",
            Stage::Vectorize => "vectorize",
            Stage::Kmeans => "kmeans",
            Stage::Labels => "labels",
            Stage::Join => "join",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gen" => Ok(Stage::Gen),
            "normalize" => Ok(Stage::Normalize),
            "vectorize" => Ok(Stage::Vectorize),
            "kmeans" => Ok(Stage::Kmeans),
            "labels" => Ok(Stage::Labels),
            "join" => Ok(Stage::Join),
            "train" => Ok(Stage::Train),
            "evaluate" => Ok(Stage::Evaluate),
            "report" => Ok(Stage::Report),
            "all" => Ok(Stage::All),
            other => Err(PipelineError::UnknownStage(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("unknown stage {0:?} (expected one of gen, normalize, vectorize, kmeans, labels, join, train, evaluate, report, all)")]
    UnknownStage(String),

    #[error("[{stage}] missing prerequisite {file}: run stage '{produced_by}' first")]
    MissingPrerequisite {
        stage: Stage,
        file: PathBuf,
        produced_by: Stage,
    },

    #[error("[{stage}] {message}")]
    Stage { stage: Stage, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn stage_err<E: std::fmt::Display>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Fixed artifact names under the output directory.
pub struct Artifacts {
    out: PathBuf,
}

impl Artifacts {
    pub fn new(output_dir: &Path) -> Self {
        Artifacts {
            out: output_dir.to_path_buf(),
        }
    }

    pub fn signals(&self) -> PathBuf {
        self.out.join("signals.csv")
    }
    pub fn ratings(&self) -> PathBuf {
        self.out.join("ratings.csv")
    }
    pub fn normalized(&self) -> PathBuf {
        self.out.join("normalized.csv")
    }
    pub fn vectors(&self) -> PathBuf {
        self.out.join("vectors.tsv")
    }
    pub fn clustered(&self) -> PathBuf {
        self.out.join("clustered.tsv")
    }
    pub fn centroids(&self) -> PathBuf {
        self.out.join("centroids.tsv")
    }
    pub fn kmeans_report(&self) -> PathBuf {
        self.out.join("kmeans_report.kv")
    }
    pub fn labels(&self) -> PathBuf {
        self.out.join("labels.tsv")
    }
    pub fn joined(&self) -> PathBuf {
        self.out.join("joined.tsv")
    }
    pub fn join_report(&self) -> PathBuf {
        self.out.join("join_report.kv")
    }
    pub fn model(&self) -> PathBuf {
        self.out.join("forest_model.txt")
    }
    pub fn oob_metrics(&self) -> PathBuf {
        self.out.join("oob_metrics.kv")
    }
    pub fn confusion(&self) -> PathBuf {
        self.out.join("confusion.csv")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.out.join("report.txt")
    }
    pub fn report_kv(&self) -> PathBuf {
        self.out.join("report.kv")
    }
    pub fn timings(&self) -> PathBuf {
        self.out.join("timings.kv")
    }
}

/// Source CSV paths for the current config: generated files for the
/// synthetic source, the configured paths otherwise.
fn source_paths(config: &PipelineConfig, artifacts: &Artifacts) -> (PathBuf, PathBuf) {
    match &config.dataset {
        DatasetSource::Synthetic(_) => (artifacts.signals(), artifacts.ratings()),
        DatasetSource::Files { signals, ratings } => (signals.clone(), ratings.clone()),
    }
}

fn require(stage: Stage, file: &Path, produced_by: Stage) -> Result<(), PipelineError> {
    if file.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingPrerequisite {
            stage,
            file: file.to_path_buf(),
            produced_by,
        })
    }
}

/// Runs one stage (or the whole chain for [`Stage::All`]) and records its
/// wall-clock in `timings.kv`. Stages are idempotent: identical inputs and
/// config reproduce identical artifacts.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<(), PipelineError> {
    let artifacts = Artifacts::new(&config.output_dir);
    fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;

    if stage == Stage::All {
        for step in Stage::ORDER {
            if step == Stage::Gen && matches!(config.dataset, DatasetSource::Files { .. }) {
                continue;
            }
            run_stage(step, config)?;
        }
        return Ok(());
    }

    let start = Instant::now();
    match stage {
        Stage::Gen => stage_gen(config, &artifacts)?,
        Stage::Normalize => stage_normalize(config, &artifacts)?,
        Stage::Vectorize => stage_vectorize(&artifacts)?,
        Stage::Kmeans => stage_kmeans(config, &artifacts)?,
        Stage::Labels => stage_labels(config, &artifacts)?,
        Stage::Join => stage_join(config, &artifacts)?,
        Stage::Train => stage_train(config, &artifacts)?,
        Stage::Evaluate => stage_evaluate(config, &artifacts)?,
        Stage::Report => {
            emit_report(config)?;
        }
        Stage::All => unreachable!("handled above"),
    }
    record_timing(&artifacts, stage, start.elapsed().as_secs_f64())?;
    Ok(())
}

fn stage_gen(config: &PipelineConfig, artifacts: &Artifacts) -> Result<(), PipelineError> {
    let DatasetSource::Synthetic(dataset) = &config.dataset else {
        return Err(PipelineError::Stage {
            stage: Stage::Gen,
            message: "dataset is configured from files; there is nothing to generate".into(),
        });
    };
    let data = generate_synthetic(dataset).map_err(stage_err(Stage::Gen))?;
    write_raw(&artifacts.signals(), &data.records).map_err(stage_err(Stage::Gen))?;
    write_ratings(&artifacts.ratings(), &data.ratings).map_err(stage_err(Stage::Gen))?;
    Ok(())
}

fn stage_normalize(config: &PipelineConfig, artifacts: &Artifacts) -> Result<(), PipelineError> {
    let (signals, ratings) = source_paths(config, artifacts);
    require(Stage::Normalize, &signals, Stage::Gen)?;
    require(Stage::Normalize, &ratings, Stage::Gen)?;
    let (records, _) = load_raw(&signals, &ratings).map_err(stage_err(Stage::Normalize))?;
    let normalized = normalize(&records).map_err(stage_err(Stage::Normalize))?;
    write_raw(&artifacts.normalized(), &normalized).map_err(stage_err(Stage::Normalize))?;
    Ok(())
}

fn stage_vectorize(artifacts: &Artifacts) -> Result<(), PipelineError> {
    require(Stage::Vectorize, &artifacts.normalized(), Stage::Normalize)?;
    let records = load_signals(&artifacts.normalized()).map_err(stage_err(Stage::Vectorize))?;
    let vectors = vectorize(&records).map_err(stage_err(Stage::Vectorize))?;
    write_vectors(&artifacts.vectors(), &vectors).map_err(stage_err(Stage::Vectorize))?;
    Ok(())
}

fn stage_kmeans(config: &PipelineConfig, artifacts: &Artifacts) -> Result<(), PipelineError> {
    require(Stage::Kmeans, &artifacts.vectors(), Stage::Vectorize)?;
    let work_dir = config.engine.scratch_dir.join("kmeans-work");
    let model = run_kmeans(
        &artifacts.vectors(),
        &artifacts.clustered(),
        &work_dir,
        &config.kmeans,
        &config.engine,
    )
    .map_err(stage_err(Stage::Kmeans))?;
    write_centroids(&artifacts.centroids(), &model.centroids)
        .map_err(stage_err(Stage::Kmeans))?;

    let mut report = String::new();
    let _ = writeln!(report, "k={}", model.k);
    let _ = writeln!(report, "metric={}", model.metric);
    let _ = writeln!(report, "iterations={}", model.iterations_run);
    let _ = writeln!(report, "converged={}", model.converged);
    let _ = writeln!(report, "empty_clusters={}", model.empty_cluster_events);
    let trace: Vec<String> = model.cost_trace.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(report, "cost_trace={}", trace.join(","));
    if let Some(final_cost) = model.cost_trace.last() {
        let _ = writeln!(report, "final_cost={final_cost}");
    }
    fs::write(artifacts.kmeans_report(), report)
        .map_err(io_err(&artifacts.kmeans_report()))?;
    Ok(())
}

fn stage_labels(config: &PipelineConfig, artifacts: &Artifacts) -> Result<(), PipelineError> {
    let (_, ratings_path) = source_paths(config, artifacts);
    require(Stage::Labels, &artifacts.normalized(), Stage::Normalize)?;
    require(Stage::Labels, &ratings_path, Stage::Gen)?;
    let (records, ratings) =
        load_raw(&artifacts.normalized(), &ratings_path).map_err(stage_err(Stage::Labels))?;

    let mut body = String::new();
    for record in &records {
        let key = canonical_key(&record.channels).map_err(stage_err(Stage::Labels))?;
        let rating = &ratings[&(record.subject, record.video)];
        let _ = writeln!(body, "{key}\t{}", encode_label(rating));
    }
    fs::write(artifacts.labels(), body).map_err(io_err(&artifacts.labels()))?;
    Ok(())
}

fn stage_join(config: &PipelineConfig, artifacts: &Artifacts) -> Result<(), PipelineError> {
    require(Stage::Join, &artifacts.clustered(), Stage::Kmeans)?;
    require(Stage::Join, &artifacts.labels(), Stage::Labels)?;
    let out_dir = config.engine.scratch_dir.join("join-out");
    let (shards, report) = mr_join(
        &artifacts.clustered(),
        &artifacts.labels(),
        &out_dir,
        &config.engine,
        &JoinOptions::default(),
    )
    .map_err(stage_err(Stage::Join))?;

    // merge shards into the single joined artifact
    let mut body = Vec::new();
    for shard in &shards {
        body.extend(fs::read(shard).map_err(io_err(shard))?);
    }
    fs::write(artifacts.joined(), body).map_err(io_err(&artifacts.joined()))?;
    let _ = fs::remove_dir_all(&out_dir);

    println!("{}", report.summary());
    let kv = format!(
        "matched={}\nunmatched_left={}\nunmatched_right={}\ncollision_keys={}\n",
        report.matched, report.unmatched_left, report.unmatched_right, report.collision_keys
    );
    fs::write(artifacts.join_report(), kv).map_err(io_err(&artifacts.join_report()))?;
    Ok(())
}

/// Rebuilds the training rows from the joined file (and the vector file
/// when raw features are enabled). Row order follows the joined file, so
/// train and evaluate see identical data.
fn build_rows(
    stage: Stage,
    config: &PipelineConfig,
    artifacts: &Artifacts,
) -> Result<(Vec<TrainRow>, FeatureSchema), PipelineError> {
    let joined = read_joined(std::slice::from_ref(&artifacts.joined()))
        .map_err(stage_err(stage))?;
    if joined.is_empty() {
        return Err(PipelineError::Stage {
            stage,
            message: "joined file has no records; nothing to train on".into(),
        });
    }

    let use_cluster = config.feature_mode != FeatureMode::RawOnly;
    let use_raw = config.feature_mode != FeatureMode::ClusterOnly;

    let vector_values: BTreeMap<String, Vec<f64>> = if use_raw {
        require(stage, &artifacts.vectors(), Stage::Vectorize)?;
        read_vectors(&artifacts.vectors(), None)
            .map_err(stage_err(stage))?
            .into_iter()
            .map(|kv| (kv.key, kv.values))
            .collect()
    } else {
        BTreeMap::new()
    };

    let raw_dims = if use_raw {
        vector_values
            .values()
            .next()
            .map(|v| v.len())
            .unwrap_or(0)
    } else {
        0
    };

    let mut rows = Vec::with_capacity(joined.len());
    for record in &joined {
        let raw = if use_raw {
            vector_values
                .get(&record.key)
                .cloned()
                .ok_or_else(|| PipelineError::Stage {
                    stage,
                    message: format!("joined key {:?} is missing from the vector file", record.key),
                })?
        } else {
            Vec::new()
        };
        let cluster = if use_cluster {
            if record.cluster >= config.kmeans.k {
                return Err(PipelineError::Stage {
                    stage,
                    message: format!(
                        "cluster {} out of range for k={}",
                        record.cluster, config.kmeans.k
                    ),
                });
            }
            Some(record.cluster as u16)
        } else {
            None
        };
        rows.push(TrainRow {
            features: RowFeatures { cluster, raw },
            label: record.label,
        });
    }
    let schema = FeatureSchema {
        cluster_categories: use_cluster.then_some(config.kmeans.k),
        raw_dims,
    };
    Ok((rows, schema))
}

fn stage_train(config: &PipelineConfig, artifacts: &Artifacts) -> Result<(), PipelineError> {
    require(Stage::Train, &artifacts.joined(), Stage::Join)?;
    let (rows, schema) = build_rows(Stage::Train, config, artifacts)?;
    let model = train_forest(&rows, &schema, &config.forest).map_err(stage_err(Stage::Train))?;
    save_model(&artifacts.model(), &model).map_err(stage_err(Stage::Train))?;
    Ok(())
}

/// Renders evaluation metrics as the machine-readable key-value block.
pub fn render_metrics_kv(metrics: &Metrics, skipped_rows: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "accuracy={}", metrics.accuracy);
    let _ = writeln!(out, "reliability={}", metrics.reliability);
    let _ = writeln!(out, "reliability_sd={}", metrics.reliability_sd);
    let _ = writeln!(out, "oob_error={}", metrics.oob_error);
    let _ = writeln!(out, "skipped_rows={skipped_rows}");
    for (index, accuracy) in metrics.per_class_accuracy.iter().enumerate() {
        let rendered = accuracy.map_or("absent".to_string(), |a| a.to_string());
        let _ = writeln!(out, "per_class_{}={rendered}", index + 1);
    }
    out
}

fn stage_evaluate(config: &PipelineConfig, artifacts: &Artifacts) -> Result<(), PipelineError> {
    require(Stage::Evaluate, &artifacts.model(), Stage::Train)?;
    require(Stage::Evaluate, &artifacts.joined(), Stage::Join)?;
    let (rows, _) = build_rows(Stage::Evaluate, config, artifacts)?;
    let model = load_model(&artifacts.model()).map_err(stage_err(Stage::Evaluate))?;
    let evaluation = oob_evaluate(&model, &rows).map_err(stage_err(Stage::Evaluate))?;

    fs::write(
        artifacts.oob_metrics(),
        render_metrics_kv(&evaluation.metrics, evaluation.skipped_rows),
    )
    .map_err(io_err(&artifacts.oob_metrics()))?;
    fs::write(artifacts.confusion(), evaluation.confusion.to_csv())
        .map_err(io_err(&artifacts.confusion()))?;
    Ok(())
}

fn record_timing(artifacts: &Artifacts, stage: Stage, secs: f64) -> Result<(), PipelineError> {
    let path = artifacts.timings();
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    if path.is_file() {
        for line in fs::read_to_string(&path).map_err(io_err(&path))?.lines() {
            if let Some((key, value)) = line.split_once('=') {
                entries.insert(key.to_string(), value.to_string());
            }
        }
    }
    entries.insert(format!("time_{stage}"), format!("{secs:.3}"));
    let mut body = String::new();
    for step in Stage::ORDER {
        if let Some(value) = entries.get(&format!("time_{step}")) {
            let _ = writeln!(body, "time_{step}={value}");
        }
    }
    fs::write(&path, body).map_err(io_err(&path))
}

fn read_kv_file(path: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    let body = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(body
        .lines()
        .filter_map(|line| {
            line.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect())
}

/// Everything the final report shows, straight from the stage artifacts.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config_echo: Vec<(String, String)>,
    pub kmeans: Vec<(String, String)>,
    pub join: Vec<(String, String)>,
    pub metrics: Vec<(String, String)>,
    pub confusion_csv: String,
    pub timings: Vec<(String, String)>,
}

impl RunReport {
    /// Machine-readable form: one `key=value` per line, metrics keys
    /// unprefixed, everything else namespaced.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.config_echo {
            let _ = writeln!(out, "config_{key}={value}");
        }
        for (key, value) in &self.kmeans {
            let _ = writeln!(out, "kmeans_{key}={value}");
        }
        for (key, value) in &self.join {
            let _ = writeln!(out, "join_{key}={value}");
        }
        for (key, value) in &self.metrics {
            let _ = writeln!(out, "{key}={value}");
        }
        for (key, value) in &self.timings {
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }

    /// Human-readable form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let section = |out: &mut String, title: &str| {
            let _ = writeln!(out, "\n== {title} ==");
        };
        let _ = writeln!(out, "emotion-recognition pipeline report");
        section(&mut out, "config");
        for (key, value) in &self.config_echo {
            let _ = writeln!(out, "  {key} = {value}");
        }
        section(&mut out, "k-means");
        for (key, value) in &self.kmeans {
            let _ = writeln!(out, "  {key} = {value}");
        }
        section(&mut out, "join");
        for (key, value) in &self.join {
            let _ = writeln!(out, "  {key} = {value}");
        }
        section(&mut out, "out-of-bag metrics");
        for (key, value) in &self.metrics {
            let _ = writeln!(out, "  {key} = {value}");
        }
        section(&mut out, "confusion matrix (rows: true class 1..8)");
        for line in self.confusion_csv.lines() {
            let _ = writeln!(out, "  {line}");
        }
        section(&mut out, "stage timings (seconds)");
        for (key, value) in &self.timings {
            let _ = writeln!(out, "  {key} = {value}");
        }
        out
    }
}

/// Assembles the run report from stage artifacts and writes both the
/// text and key-value forms. Requires the evaluate stage to be complete.
pub fn emit_report(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let artifacts = Artifacts::new(&config.output_dir);
    require(Stage::Report, &artifacts.kmeans_report(), Stage::Kmeans)?;
    require(Stage::Report, &artifacts.join_report(), Stage::Join)?;
    require(Stage::Report, &artifacts.oob_metrics(), Stage::Evaluate)?;
    require(Stage::Report, &artifacts.confusion(), Stage::Evaluate)?;

    let metrics = read_kv_file(&artifacts.oob_metrics())?;
    if !metrics.iter().any(|(k, _)| k.starts_with("per_class_")) {
        return Err(PipelineError::Stage {
            stage: Stage::Report,
            message: "evaluate output has no per-class accuracies; rerun evaluate".into(),
        });
    }

    let report = RunReport {
        config_echo: config.echo(),
        kmeans: read_kv_file(&artifacts.kmeans_report())?,
        join: read_kv_file(&artifacts.join_report())?,
        metrics,
        confusion_csv: fs::read_to_string(artifacts.confusion())
            .map_err(io_err(&artifacts.confusion()))?,
        timings: if artifacts.timings().is_file() {
            read_kv_file(&artifacts.timings())?
        } else {
            Vec::new()
        },
    };

    fs::write(artifacts.report_kv(), report.to_kv())
        .map_err(io_err(&artifacts.report_kv()))?;
    fs::write(artifacts.report_txt(), report.to_text())
        .map_err(io_err(&artifacts.report_txt()))?;
    Ok(report)
}

/// Ground-truth purity of a clustering: for each cluster take its most
/// common true class, sum those counts, divide by the total. Used by the
/// synthetic-recovery checks.
pub fn cluster_purity(assignment_classes: &[(usize, crate::dataset::ClassId)]) -> f64 {
    let mut per_cluster: BTreeMap<usize, [u64; CLASS_COUNT]> = BTreeMap::new();
    for &(cluster, class) in assignment_classes {
        per_cluster.entry(cluster).or_insert([0; CLASS_COUNT])[class.index()] += 1;
    }
    let agreeing: u64 = per_cluster
        .values()
        .map(|counts| *counts.iter().max().expect("counts is nonempty"))
        .sum();
    agreeing as f64 / assignment_classes.len() as f64
}

/// Convenience wrapper used by tests and the metrics fixtures: metrics of
/// an explicit confusion matrix rendered to kv lines.
pub fn metrics_kv_from_confusion(
    rows: &[Vec<u64>],
    skipped_rows: u64,
) -> Result<String, PipelineError> {
    let cm = forest::ConfusionMatrix::from_rows(rows);
    let metrics = compute_metrics(&cm).map_err(stage_err(Stage::Report))?;
    Ok(render_metrics_kv(&metrics, skipped_rows))
}
