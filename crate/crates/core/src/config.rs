//! Pipeline configuration: one flat-section `key = value` file (TOML)
//! plus command-line overrides. The resolved config is echoed into the
//! run report for provenance.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dataset::DatasetConfig;
use crate::forest::{FeatureMode, ForestParams};
use crate::kmeans::{KmeansConfig, Metric};
use crate::EngineConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where the raw records come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Generate DEAP-shaped data with the built-in generator.
    Synthetic(DatasetConfig),
    /// Read existing CSV files.
    Files { signals: PathBuf, ratings: PathBuf },
}

/// Fully resolved pipeline settings.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    pub kmeans: KmeansConfig,
    pub forest: ForestParams,
    pub feature_mode: FeatureMode,
    pub engine: EngineConfig,
}

/// Command-line overrides; `seed` replaces the dataset, kmeans and forest
/// seeds at once.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub metric: Option<Metric>,
    pub k: Option<usize>,
    pub max_iter: Option<usize>,
    pub epsilon: Option<f64>,
    pub trees: Option<usize>,
    pub feature_mode: Option<FeatureMode>,
    pub scratch_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    output_dir: Option<PathBuf>,
    #[serde(default)]
    dataset: RawDataset,
    #[serde(default)]
    kmeans: RawKmeans,
    #[serde(default)]
    forest: RawForest,
    #[serde(default)]
    engine: RawEngine,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    signals: Option<PathBuf>,
    ratings: Option<PathBuf>,
    subjects: Option<u32>,
    videos: Option<u32>,
    samples_per_video: Option<u32>,
    channels: Option<usize>,
    class_separation: Option<f64>,
    noise_sigma: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKmeans {
    k: Option<usize>,
    metric: Option<String>,
    max_iter: Option<usize>,
    epsilon: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawForest {
    trees: Option<usize>,
    features_per_split: Option<usize>,
    min_node_size: Option<usize>,
    max_depth: Option<usize>,
    seed: Option<u64>,
    feature_mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    workers: Option<usize>,
    partitions: Option<usize>,
    scratch_dir: Option<PathBuf>,
}

/// Environment variable consulted for the scratch directory when neither
/// the flag nor the config sets one.
pub const SCRATCH_ENV: &str = "EMOPIPE_SCRATCH";

/// Loads, validates and resolves a pipeline config.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<PipelineConfig, ConfigError> {
    let body = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: RawConfig = toml::from_str(&body).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    resolve(raw, overrides)
}

fn resolve(raw: RawConfig, overrides: &Overrides) -> Result<PipelineConfig, ConfigError> {
    let output_dir = raw
        .output_dir
        .ok_or_else(|| ConfigError::Invalid("output_dir is required".into()))?;

    let dataset = match (&raw.dataset.signals, &raw.dataset.ratings) {
        (Some(signals), Some(ratings)) => DatasetSource::Files {
            signals: signals.clone(),
            ratings: ratings.clone(),
        },
        (Some(_), None) | (None, Some(_)) => {
            return Err(ConfigError::Invalid(
                "dataset.signals and dataset.ratings must be set together".into(),
            ))
        }
        (None, None) => {
            let need = |value: Option<u32>, name: &str| {
                value.ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "dataset.{name} is required for synthetic data"
                    ))
                })
            };
            let config = DatasetConfig {
                subjects: need(raw.dataset.subjects, "subjects")?,
                videos: need(raw.dataset.videos, "videos")?,
                samples_per_video: need(raw.dataset.samples_per_video, "samples_per_video")?,
                channels: raw.dataset.channels.unwrap_or(40),
                class_separation: raw.dataset.class_separation.unwrap_or(10.0),
                noise_sigma: raw.dataset.noise_sigma.unwrap_or(0.5),
                seed: overrides.seed.or(raw.dataset.seed).unwrap_or(0),
            };
            config
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            DatasetSource::Synthetic(config)
        }
    };

    let metric = match (&overrides.metric, &raw.kmeans.metric) {
        (Some(metric), _) => *metric,
        (None, Some(name)) => name
            .parse::<Metric>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        (None, None) => Metric::Euclidean,
    };
    let kmeans = KmeansConfig {
        k: overrides.k.or(raw.kmeans.k).unwrap_or(8),
        metric,
        max_iter: overrides.max_iter.or(raw.kmeans.max_iter).unwrap_or(10),
        epsilon: overrides.epsilon.or(raw.kmeans.epsilon).unwrap_or(1e-4),
        seed: overrides.seed.or(raw.kmeans.seed).unwrap_or(0),
    };
    if kmeans.k < 1 {
        return Err(ConfigError::Invalid("kmeans.k must be >= 1".into()));
    }
    if kmeans.max_iter < 1 {
        return Err(ConfigError::Invalid("kmeans.max_iter must be >= 1".into()));
    }
    if kmeans.epsilon.is_nan() || kmeans.epsilon < 0.0 {
        return Err(ConfigError::Invalid("kmeans.epsilon must be >= 0".into()));
    }

    let forest = ForestParams {
        trees: overrides.trees.or(raw.forest.trees).unwrap_or(100),
        features_per_split: raw.forest.features_per_split,
        min_node_size: raw.forest.min_node_size.unwrap_or(1),
        max_depth: raw.forest.max_depth,
        seed: overrides.seed.or(raw.forest.seed).unwrap_or(0),
    };
    if forest.trees < 1 {
        return Err(ConfigError::Invalid("forest.trees must be >= 1".into()));
    }
    let feature_mode = match (&overrides.feature_mode, &raw.forest.feature_mode) {
        (Some(mode), _) => *mode,
        (None, Some(name)) => name
            .parse::<FeatureMode>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        (None, None) => FeatureMode::ClusterRaw,
    };

    let scratch_dir = overrides
        .scratch_dir
        .clone()
        .or(raw.engine.scratch_dir)
        .or_else(|| std::env::var_os(SCRATCH_ENV).map(PathBuf::from))
        .unwrap_or_else(|| output_dir.join("scratch"));
    let engine = EngineConfig {
        workers: overrides.workers.or(raw.engine.workers).unwrap_or(4),
        partitions: raw.engine.partitions.unwrap_or(8),
        scratch_dir,
    };
    if engine.workers < 1 || engine.partitions < 1 {
        return Err(ConfigError::Invalid(
            "engine.workers and engine.partitions must be >= 1".into(),
        ));
    }

    Ok(PipelineConfig {
        output_dir,
        dataset,
        kmeans,
        forest,
        feature_mode,
        engine,
    })
}

impl PipelineConfig {
    /// Deterministic key/value view for the report's config echo.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![(
            "output_dir".to_string(),
            self.output_dir.display().to_string(),
        )];
        match &self.dataset {
            DatasetSource::Synthetic(d) => {
                out.push(("dataset.source".into(), "synthetic".into()));
                out.push(("dataset.subjects".into(), d.subjects.to_string()));
                out.push(("dataset.videos".into(), d.videos.to_string()));
                out.push((
                    "dataset.samples_per_video".into(),
                    d.samples_per_video.to_string(),
                ));
                out.push(("dataset.channels".into(), d.channels.to_string()));
                out.push((
                    "dataset.class_separation".into(),
                    d.class_separation.to_string(),
                ));
                out.push(("dataset.noise_sigma".into(), d.noise_sigma.to_string()));
                out.push(("dataset.seed".into(), d.seed.to_string()));
            }
            DatasetSource::Files { signals, ratings } => {
                out.push(("dataset.source".into(), "files".into()));
                out.push(("dataset.signals".into(), signals.display().to_string()));
                out.push(("dataset.ratings".into(), ratings.display().to_string()));
            }
        }
        out.push(("kmeans.k".into(), self.kmeans.k.to_string()));
        out.push(("kmeans.metric".into(), self.kmeans.metric.to_string()));
        out.push(("kmeans.max_iter".into(), self.kmeans.max_iter.to_string()));
        out.push(("kmeans.epsilon".into(), self.kmeans.epsilon.to_string()));
        out.push(("kmeans.seed".into(), self.kmeans.seed.to_string()));
        out.push(("forest.trees".into(), self.forest.trees.to_string()));
        out.push((
            "forest.features_per_split".into(),
            self.forest
                .features_per_split
                .map_or("sqrt".into(), |m| m.to_string()),
        ));
        out.push((
            "forest.min_node_size".into(),
            self.forest.min_node_size.to_string(),
        ));
        out.push((
            "forest.max_depth".into(),
            self.forest.max_depth.map_or("unlimited".into(), |d| d.to_string()),
        ));
        out.push(("forest.seed".into(), self.forest.seed.to_string()));
        out.push(("forest.feature_mode".into(), self.feature_mode.to_string()));
        out.push(("engine.workers".into(), self.engine.workers.to_string()));
        out.push((
            "engine.partitions".into(),
            self.engine.partitions.to_string(),
        ));
        out.push((
            "engine.scratch_dir".into(),
            self.engine.scratch_dir.display().to_string(),
        ));
        out
    }
}
