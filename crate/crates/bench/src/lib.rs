//! Benchmark harness: noise-free ground-truth search, Monte Carlo comparison of the
//! tuners, summary statistics and result files.

pub mod ground_truth;
pub mod monte_carlo;
pub mod output;
pub mod summary;

pub use ground_truth::{cached_ground_truth, grid_argmin, ground_truth_search, GroundTruth};
pub use monte_carlo::{
    apply_override, nominal_ratios, run_batch, run_monte_carlo, sweep_configs, BatchFailure, BatchResult,
    BenchConfig, MeasuredPoint, Mode, MonteCarloOutput, OptimumDefinition, Sweep,
};
pub use output::{emit_results, ensure_writable, load_batches, load_manifest, report, Manifest};
pub use summary::{iterations_to_threshold, percentile, summarize, Summary};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] guided_bo::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("invalid bench configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;
