//! Emotion-recognition pipeline over DEAP-shaped biosignal records.
//!
//! The flow mirrors a small production data-parallel setup: synthesize or
//! load per-sample channel readings, normalize them per subject and
//! channel, turn them into keyed dense vectors, cluster with K-means under
//! one of five distance metrics, join cluster assignments with 8-class
//! emotion labels via a reduce-side join, and train a random forest whose
//! quality is estimated with out-of-bag error. Heavy stages run on the
//! [`gridrun`] map-reduce engine so results are deterministic for any
//! worker count.

pub mod config;
pub mod dataset;
pub mod forest;
pub mod joiner;
pub mod kmeans;
pub mod pipeline;
pub mod vecstore;

use std::path::PathBuf;

/// Execution settings shared by every gridrun-backed stage.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Worker threads; never affects output bytes.
    pub workers: usize,
    /// Reduce partitions.
    pub partitions: usize,
    /// Directory for shuffle scratch files.
    pub scratch_dir: PathBuf,
}

