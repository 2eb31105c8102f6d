use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emopipe::config::{load_config, Overrides};
use emopipe::forest::FeatureMode;
use emopipe::joiner::{join_benchmark, BenchmarkSpec};
use emopipe::kmeans::Metric;
use emopipe::pipeline::{run_stage, Stage};
use emopipe::EngineConfig;

/// Biosignal emotion-recognition pipeline: normalize, cluster, join,
/// classify.
#[derive(Parser)]
#[command(name = "emopipe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline stage, or `all` for the full chain.
    Pipeline {
        /// gen | normalize | vectorize | kmeans | labels | join | train |
        /// evaluate | report | all
        stage: String,
        /// Pipeline config file (TOML sections of key = value).
        #[arg(long)]
        config: PathBuf,
        /// Engine worker threads (never changes output bytes).
        #[arg(long)]
        workers: Option<usize>,
        /// Replaces the dataset, kmeans and forest seeds at once.
        #[arg(long)]
        seed: Option<u64>,
        /// euclidean | squared-euclidean | manhattan | cosine | tanimoto
        #[arg(long)]
        metric: Option<String>,
        /// Cluster count.
        #[arg(long)]
        k: Option<usize>,
        /// K-means iteration cap.
        #[arg(long)]
        max_iter: Option<usize>,
        /// K-means convergence threshold on centroid movement.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Forest size.
        #[arg(long)]
        trees: Option<usize>,
        /// cluster | raw | cluster+raw
        #[arg(long)]
        feature_mode: Option<String>,
        /// Shuffle scratch directory (also via EMOPIPE_SCRATCH).
        #[arg(long)]
        scratch_dir: Option<PathBuf>,
    },
    /// Time the nested-loop baseline against the map-reduce join and fit
    /// log-log slopes.
    JoinBench {
        /// Sizes for the quadratic nested-loop baseline.
        #[arg(long, value_delimiter = ',', default_value = "10000,20000,40000")]
        nested_sizes: Vec<u64>,
        /// Sizes for the map-reduce join.
        #[arg(long, value_delimiter = ',', default_value = "100000,200000,400000")]
        mr_sizes: Vec<u64>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 8)]
        partitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Working directory for generated inputs and scratch.
        #[arg(long, default_value = "join-bench")]
        work_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Pipeline {
            stage,
            config,
            workers,
            seed,
            metric,
            k,
            max_iter,
            epsilon,
            trees,
            feature_mode,
            scratch_dir,
        } => {
            let stage: Stage = stage.parse().map_err(|e| format!("{e}"))?;
            let overrides = Overrides {
                workers,
                seed,
                metric: metric
                    .map(|m| m.parse::<Metric>())
                    .transpose()
                    .map_err(|e| format!("{e}"))?,
                k,
                max_iter,
                epsilon,
                trees,
                feature_mode: feature_mode
                    .map(|m| m.parse::<FeatureMode>())
                    .transpose()
                    .map_err(|e| format!("{e}"))?,
                scratch_dir,
            };
            let config = load_config(&config, &overrides).map_err(|e| format!("{e}"))?;
            run_stage(stage, &config).map_err(|e| format!("{e}"))
        }
        Command::JoinBench {
            nested_sizes,
            mr_sizes,
            trials,
            workers,
            partitions,
            seed,
            work_dir,
        } => {
            if trials < 1 {
                return Err("trials must be >= 1".into());
            }
            let engine = EngineConfig {
                workers,
                partitions,
                scratch_dir: work_dir.join("scratch"),
            };
            let spec = BenchmarkSpec {
                nested_sizes,
                mr_sizes,
                trials,
                seed,
            };
            let report =
                join_benchmark(&spec, &work_dir, &engine).map_err(|e| format!("{e}"))?;
            print!("{}", report.render());
            Ok(())
        }
    }
}
