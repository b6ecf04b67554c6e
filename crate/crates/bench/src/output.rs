//! Result files.
//!
//! A run directory holds `manifest.json`, `batches.json`, `iterations.csv`,
//! `summary.json`, `summary.csv`, `bands.csv` and `histogram.csv`. Only the
//! manifest's `generated_at` field depends on the wall clock.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use guided_bo::lti::ControllerParams;
use serde::{Deserialize, Serialize};

use crate::ground_truth::GroundTruth;
use crate::monte_carlo::{BenchConfig, MonteCarloOutput};
use crate::summary::{summarize, Summary, BAND_LEVELS};
use crate::{BenchError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const BATCHES: &str = "batches.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// Seconds since the Unix epoch.
    pub generated_at: u64,
    pub config: BenchConfig,
    pub seeds: Vec<u64>,
    pub ground_truth: GroundTruth,
    pub optimum_cost: f64,
    pub nominal: Vec<(ControllerParams, f64)>,
    pub failures: usize,
}

/// Creates `dir` and checks a file can be written there.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Writes every result file for `out` into `dir` and returns the summary.
pub fn emit_results(
    out: &MonteCarloOutput,
    bench: &BenchConfig,
    nominal: &[(ControllerParams, f64)],
    dir: &Path,
) -> Result<Summary> {
    ensure_writable(dir)?;
    let summary = summarize(out, &bench.thresholds, nominal);
    let generated_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        generated_at,
        config: bench.clone(),
        seeds: bench.seeds(),
        ground_truth: out.ground_truth,
        optimum_cost: out.optimum_cost,
        nominal: nominal.to_vec(),
        failures: out.failures.len(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    write_json(&dir.join(BATCHES), out)?;
    write_json(&dir.join("summary.json"), &summary)?;

    let mut w = csv_writer(&dir.join("iterations.csv"))?;
    w.write_record(["mode", "batch", "seed", "iteration", "kp", "ki", "cost", "provenance", "ratio"])?;
    for r in &out.results {
        for p in &r.points {
            let provenance = match p.provenance {
                guided_bo::tuner::Provenance::RealPlant => "real_plant",
                guided_bo::tuner::Provenance::Twin => "twin",
            };
            w.write_record([
                r.mode.to_string(),
                r.batch.to_string(),
                r.seed.to_string(),
                p.iteration.to_string(),
                p.theta.kp.to_string(),
                p.theta.ki.to_string(),
                p.cost.to_string(),
                provenance.to_string(),
                (p.cost / out.optimum_cost).to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("summary.csv"))?;
    w.write_record([
        "mode",
        "threshold",
        "mean_iterations",
        "censored",
        "batches",
        "failures",
        "mean_final_ratio",
        "mean_activations",
        "mean_twin_evaluations",
    ])?;
    for m in &summary.modes {
        for t in &m.thresholds {
            w.write_record([
                m.mode.to_string(),
                t.threshold.to_string(),
                t.mean.to_string(),
                t.censored.to_string(),
                m.batches.to_string(),
                m.failures.to_string(),
                m.mean_final_ratio.to_string(),
                m.mean_activations.to_string(),
                m.mean_twin_evaluations.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("bands.csv"))?;
    let mut header = vec!["mode".to_string(), "iteration".into(), "mean".into(), "median".into()];
    for l in BAND_LEVELS {
        header.push(format!("lower_{l}"));
        header.push(format!("upper_{l}"));
    }
    w.write_record(&header)?;
    for m in &summary.modes {
        for row in &m.bands {
            let mut rec = vec![m.mode.to_string(), row.iteration.to_string(), row.mean.to_string(), row.median.to_string()];
            for (lo, hi) in &row.bands {
                rec.push(lo.to_string());
                rec.push(hi.to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("histogram.csv"))?;
    w.write_record(["mode", "lower", "upper", "count"])?;
    for m in &summary.modes {
        for b in &m.histogram {
            let upper = b.upper.map_or_else(|| "inf".to_string(), |u| u.to_string());
            w.write_record([m.mode.to_string(), b.lower.to_string(), upper, b.count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(summary)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?)
}

pub fn load_batches(dir: &Path) -> Result<MonteCarloOutput> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(BATCHES))?)?)
}

/// Recomputes the summary from the files in `dir`.
pub fn report(dir: &Path) -> Result<Summary> {
    let manifest = load_manifest(dir)?;
    let out = load_batches(dir)?;
    if out.optimum_cost != manifest.optimum_cost {
        return Err(BenchError::Config("manifest and batch file disagree on the optimum".into()));
    }
    Ok(summarize(&out, &manifest.config.thresholds, &manifest.nominal))
}
