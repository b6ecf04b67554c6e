//! Exhaustive noise-free grid search for the optimum gains.

use std::path::Path;

use guided_bo::lti::{ControllerParams, FeasibleSet, LoopConfig, LoopSimulator};
use guided_bo::metrics::clean_cost;
use guided_bo::tuner::GuidedBoConfig;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: ControllerParams,
    pub cost: f64,
    /// Lattice points per dimension.
    pub grid: usize,
}

/// Minimizes `cost` over the inclusive `grid x grid` lattice on `feasible`, `kp` outer.
/// The first lattice point wins ties.
pub fn grid_argmin<F: FnMut(ControllerParams) -> f64>(feasible: &FeasibleSet, grid: usize, mut cost: F) -> GroundTruth {
    assert!(grid >= 2, "lattice needs at least two points per dimension");
    let mut best = (f64::INFINITY, feasible.denormalize([0.0, 0.0]));
    let step = 1.0 / (grid - 1) as f64;
    for i in 0..grid {
        for j in 0..grid {
            let theta = feasible.denormalize([i as f64 * step, j as f64 * step]);
            let c = cost(theta);
            if c < best.0 {
                best = (c, theta);
            }
        }
    }
    GroundTruth { theta: best.1, cost: best.0, grid }
}

pub fn ground_truth_search(cfg: &GuidedBoConfig, grid: usize) -> Result<GroundTruth> {
    if grid < 10 {
        return Err(BenchError::Config(format!("ground-truth grid must be at least 10, got {grid}")));
    }
    let loop_cfg = LoopConfig { noise_std: 0.0, ..cfg.loop_cfg.clone() };
    let sim = LoopSimulator::new(&cfg.plant, &loop_cfg)?;
    Ok(grid_argmin(&cfg.feasible, grid, |theta| clean_cost(&sim, theta, &cfg.weights).0))
}

/// Everything the ground truth depends on.
pub fn cache_key(cfg: &GuidedBoConfig, grid: usize) -> serde_json::Value {
    let loop_cfg = LoopConfig { noise_std: 0.0, rng_seed: 0, ..cfg.loop_cfg.clone() };
    serde_json::json!({
        "plant": cfg.plant,
        "weights": cfg.weights,
        "loop": loop_cfg,
        "feasible": cfg.feasible,
        "grid": grid,
    })
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: serde_json::Value,
    ground_truth: GroundTruth,
}

/// Reads the cached optimum at `path` if it was computed for the same plant, weights,
/// loop and grid; otherwise recomputes and rewrites it.
pub fn cached_ground_truth(cfg: &GuidedBoConfig, grid: usize, path: &Path) -> Result<GroundTruth> {
    let key = cache_key(cfg, grid);
    if let Ok(text) = std::fs::read_to_string(path) {
        if let Ok(entry) = serde_json::from_str::<CacheEntry>(&text) {
            if entry.key == key {
                return Ok(entry.ground_truth);
            }
        }
    }
    let ground_truth = ground_truth_search(cfg, grid)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(&CacheEntry { key, ground_truth })?)?;
    Ok(ground_truth)
}
