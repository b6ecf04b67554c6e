//! Batched comparison of the tuners on the simulated plant.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use guided_bo::lti::{ControllerParams, LoopConfig, LoopSimulator};
use guided_bo::metrics::clean_cost;
use guided_bo::rng::{batch_seed, stream_rng, Stream};
use guided_bo::tuner::{
    run_mode, Experiment, ForcedSchedule, GuidedBoConfig, Provenance, SimulatedPlant, TunerMode,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ground_truth::GroundTruth;
use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bo,
    Guided,
    Forced,
    Nominal,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Bo => "bo",
            Mode::Guided => "guided",
            Mode::Forced => "forced",
            Mode::Nominal => "nominal",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bo" => Ok(Mode::Bo),
            "guided" => Ok(Mode::Guided),
            "forced" => Ok(Mode::Forced),
            "nominal" => Ok(Mode::Nominal),
            other => Err(BenchError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Denominator of the optimality ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumDefinition {
    /// Noise-free grid-search optimum.
    GridSearch,
    /// Lowest cost measured over all batches and modes.
    MinMeasured,
}

/// One parameter varied over a list of values; each value gets its own Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub name: String,
    pub values: Vec<String>,
}

impl FromStr for Sweep {
    type Err = BenchError;

    /// `name=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| BenchError::Config(format!("sweep must look like name=v1,v2: {s:?}")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(BenchError::Config("sweep needs at least one value".into()));
        }
        Ok(Sweep { name: name.trim().to_string(), values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub tuner: GuidedBoConfig,
    pub batches: usize,
    pub modes: Vec<Mode>,
    pub ground_truth_grid: usize,
    pub sweep: Option<Sweep>,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Optimality ratios whose first-hit iteration is reported.
    pub thresholds: Vec<f64>,
    /// Printed baseline gains; the first one is used by the nominal mode.
    pub nominal_gains: Vec<ControllerParams>,
    pub optimum: OptimumDefinition,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            tuner: GuidedBoConfig::default(),
            batches: 20,
            modes: vec![Mode::Bo, Mode::Guided],
            ground_truth_grid: 100,
            sweep: None,
            output_dir: PathBuf::from("results"),
            workers: 1,
            thresholds: vec![1.71, 1.49, 1.05],
            nominal_gains: vec![ControllerParams::new(0.85, 1.07), ControllerParams::new(0.86, 0.89)],
            optimum: OptimumDefinition::GridSearch,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batches < 1 {
            return Err(BenchError::Config("batches must be at least 1".into()));
        }
        if self.ground_truth_grid < 10 {
            return Err(BenchError::Config("ground_truth_grid must be at least 10".into()));
        }
        if self.modes.is_empty() {
            return Err(BenchError::Config("at least one mode is required".into()));
        }
        if self.modes.contains(&Mode::Forced) && self.tuner.forced_schedule.is_none() {
            return Err(BenchError::Config("forced mode needs tuner.forced_schedule".into()));
        }
        if self.modes.contains(&Mode::Nominal) && self.nominal_gains.is_empty() {
            return Err(BenchError::Config("nominal mode needs nominal_gains".into()));
        }
        self.tuner.validate()?;
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.batches).map(|b| batch_seed(self.tuner.rng_seed, b)).collect()
    }
}

/// Sets one tuner field from text. `forced` takes `every:session_length`.
pub fn apply_override(cfg: &mut GuidedBoConfig, name: &str, value: &str) -> Result<()> {
    let bad = |e: &dyn fmt::Display| BenchError::Config(format!("{name}={value}: {e}"));
    let float = || value.parse::<f64>().map_err(|e| bad(&e));
    let count = || value.parse::<usize>().map_err(|e| bad(&e));
    match name {
        "eta1" => cfg.eta1 = float()?,
        "eta2" => cfg.eta2 = float()?,
        "eta3" => cfg.eta3 = float()?,
        "delta_tilde" => cfg.delta_tilde = float()?,
        "noise_std" => cfg.noise_std = float()?,
        "n_ei" => cfg.n_ei = count()?,
        "n_max" => cfg.n_max = count()?,
        "n0" => cfg.n0 = count()?,
        "twin_order" => cfg.twin_order = count()?,
        "grid_resolution" => cfg.grid_resolution = count()?,
        "twin_degradation" => cfg.twin_degradation = Some(float()?),
        "forced" => {
            let (every, len) = value.split_once(':').ok_or_else(|| bad(&"expected every:session_length"))?;
            cfg.forced_schedule = Some(ForcedSchedule {
                every: every.trim().parse().map_err(|e| bad(&e))?,
                session_length: len.trim().parse().map_err(|e| bad(&e))?,
            });
        }
        _ => return Err(BenchError::Config(format!("unknown sweep parameter {name:?}"))),
    }
    Ok(())
}

/// One configuration per sweep value, labelled `name=value`. Without a sweep the base
/// configuration is returned with an empty label.
pub fn sweep_configs(bench: &BenchConfig) -> Result<Vec<(String, BenchConfig)>> {
    let Some(sweep) = &bench.sweep else {
        return Ok(vec![(String::new(), bench.clone())]);
    };
    sweep
        .values
        .iter()
        .map(|v| {
            let mut cfg = BenchConfig { sweep: None, ..bench.clone() };
            apply_override(&mut cfg.tuner, &sweep.name, v)?;
            Ok((format!("{}={}", sweep.name, v), cfg))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPoint {
    pub iteration: usize,
    pub theta: ControllerParams,
    pub cost: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub mode: Mode,
    pub batch: usize,
    pub seed: u64,
    /// Best measured real cost after the initial design (index 0) and each real iteration.
    pub incumbents: Vec<f64>,
    /// `incumbents` divided by the optimum cost.
    pub ratios: Vec<f64>,
    pub activations: usize,
    pub twin_evaluations: usize,
    pub reinitializations: usize,
    pub points: Vec<MeasuredPoint>,
}

impl BatchResult {
    pub fn final_ratio(&self) -> f64 {
        self.ratios.last().copied().unwrap_or(f64::NAN)
    }

    fn set_optimum(&mut self, optimum_cost: f64) {
        self.ratios = self.incumbents.iter().map(|c| c / optimum_cost).collect();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub mode: Mode,
    pub batch: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutput {
    pub ground_truth: GroundTruth,
    /// Denominator actually used for every ratio.
    pub optimum_cost: f64,
    pub results: Vec<BatchResult>,
    pub failures: Vec<BatchFailure>,
}

fn tuner_mode(mode: Mode) -> Option<TunerMode> {
    match mode {
        Mode::Bo => Some(TunerMode::Bo),
        Mode::Guided => Some(TunerMode::Guided),
        Mode::Forced => Some(TunerMode::Forced),
        Mode::Nominal => None,
    }
}

/// One tuner run with master seed `seed`. The nominal mode measures `nominal` once
/// and holds that cost over the whole budget.
pub fn run_batch(
    cfg: &GuidedBoConfig,
    mode: Mode,
    batch: usize,
    seed: u64,
    optimum_cost: f64,
    nominal: ControllerParams,
) -> Result<BatchResult> {
    let cfg = GuidedBoConfig { rng_seed: seed, ..cfg.clone() };
    let mut plant = SimulatedPlant::from_config(&cfg)?;
    let mut result = match tuner_mode(mode) {
        Some(tm) => {
            let h = run_mode(&mut plant, &cfg, tm)?;
            BatchResult {
                mode,
                batch,
                seed,
                incumbents: h.incumbent_curve(),
                ratios: Vec::new(),
                activations: h.activations,
                twin_evaluations: h.twin_evaluations,
                reinitializations: h.reinitializations,
                points: h
                    .records
                    .iter()
                    .map(|r| MeasuredPoint { iteration: r.iteration, theta: r.theta, cost: r.cost, provenance: r.provenance })
                    .collect(),
            }
        }
        None => {
            let m = plant.measure(nominal, &mut stream_rng(seed, Stream::Measurement))?;
            BatchResult {
                mode,
                batch,
                seed,
                incumbents: vec![m.cost; cfg.n_max + 1],
                ratios: Vec::new(),
                activations: 0,
                twin_evaluations: 0,
                reinitializations: 0,
                points: vec![MeasuredPoint { iteration: 0, theta: nominal, cost: m.cost, provenance: Provenance::RealPlant }],
            }
        }
    };
    result.set_optimum(optimum_cost);
    Ok(result)
}

/// Runs every mode on every batch. A batch seeds all modes identically, so they share
/// the initial design. Failed runs are collected, not fatal.
pub fn run_monte_carlo(bench: &BenchConfig, ground_truth: &GroundTruth) -> Result<MonteCarloOutput> {
    bench.validate()?;
    let seeds = bench.seeds();
    let tasks: Vec<(usize, Mode)> = (0..bench.batches).flat_map(|b| bench.modes.iter().map(move |m| (b, *m))).collect();
    let nominal = bench.nominal_gains.first().copied().unwrap_or(ground_truth.theta);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(bench.workers.max(1)).build()?;
    let outcomes: Vec<std::result::Result<BatchResult, BatchFailure>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(b, mode)| {
                run_batch(&bench.tuner, mode, b, seeds[b], ground_truth.cost, nominal).map_err(|e| BatchFailure {
                    mode,
                    batch: b,
                    seed: seeds[b],
                    error: e.to_string(),
                })
            })
            .collect()
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    let optimum_cost = match bench.optimum {
        OptimumDefinition::GridSearch => ground_truth.cost,
        OptimumDefinition::MinMeasured => results
            .iter()
            .flat_map(|r| r.points.iter())
            .filter(|p| p.provenance == Provenance::RealPlant)
            .map(|p| p.cost)
            .fold(f64::INFINITY, f64::min),
    };
    for r in &mut results {
        r.set_optimum(optimum_cost);
    }
    Ok(MonteCarloOutput { ground_truth: *ground_truth, optimum_cost, results, failures })
}

/// Noise-free cost of each printed baseline divided by `optimum_cost`.
pub fn nominal_ratios(bench: &BenchConfig, optimum_cost: f64) -> Result<Vec<(ControllerParams, f64)>> {
    let loop_cfg = LoopConfig { noise_std: 0.0, ..bench.tuner.loop_cfg.clone() };
    let sim = LoopSimulator::new(&bench.tuner.plant, &loop_cfg)?;
    Ok(bench
        .nominal_gains
        .iter()
        .map(|g| (*g, clean_cost(&sim, *g, &bench.tuner.weights).0 / optimum_cost))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_modes_and_sweeps() {
        assert_eq!("guided".parse::<Mode>().unwrap(), Mode::Guided);
        assert!("fast".parse::<Mode>().is_err());
        let s: Sweep = "eta1=1e-6, 2,3".parse().unwrap();
        assert_eq!(s.name, "eta1");
        assert_eq!(s.values, vec!["1e-6", "2", "3"]);
        assert!("eta1".parse::<Sweep>().is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = GuidedBoConfig::default();
        apply_override(&mut cfg, "eta1", "inf").unwrap();
        assert_eq!(cfg.eta1, f64::INFINITY);
        apply_override(&mut cfg, "forced", "2:5").unwrap();
        assert_eq!(cfg.forced_schedule, Some(ForcedSchedule { every: 2, session_length: 5 }));
        apply_override(&mut cfg, "n0", "4").unwrap();
        assert_eq!(cfg.n0, 4);
        assert!(apply_override(&mut cfg, "colour", "1").is_err());
        assert!(apply_override(&mut cfg, "n0", "x").is_err());
    }

    #[test]
    fn modes_share_the_initial_design() {
        let tuner = GuidedBoConfig { n_max: 2, grid_resolution: 15, gp_starts: 2, n0: 3, ..GuidedBoConfig::default() };
        let bench = BenchConfig { tuner, batches: 2, ground_truth_grid: 10, ..BenchConfig::default() };
        let gt = crate::ground_truth_search(&bench.tuner, 10).unwrap();
        let out = run_monte_carlo(&bench, &gt).unwrap();
        assert!(out.failures.is_empty());
        for b in 0..2 {
            let designs: Vec<Vec<ControllerParams>> = out
                .results
                .iter()
                .filter(|r| r.batch == b)
                .map(|r| r.points.iter().filter(|p| p.iteration == 0).map(|p| p.theta).collect())
                .collect();
            assert_eq!(designs.len(), 2);
            assert_eq!(designs[0], designs[1]);
        }
        assert_ne!(out.results[0].seed, out.results[2].seed);
    }
}
