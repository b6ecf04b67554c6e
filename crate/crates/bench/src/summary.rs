//! Statistics over Monte Carlo batches.

use guided_bo::lti::ControllerParams;
use guided_bo::tuner::Provenance;
use serde::{Deserialize, Serialize};

use crate::monte_carlo::{BatchResult, Mode, MonteCarloOutput};

/// Central interval levels of the convergence bands, in percent.
pub const BAND_LEVELS: [f64; 4] = [68.0, 90.0, 95.0, 99.0];
pub const HISTOGRAM_WIDTH: f64 = 0.25;
pub const HISTOGRAM_LOW: f64 = 1.0;
pub const HISTOGRAM_HIGH: f64 = 5.0;

/// First index whose ratio is at most `threshold`, or `ratios.len()` if none is
/// (the run is censored at one past the budget).
pub fn iterations_to_threshold(ratios: &[f64], threshold: f64) -> usize {
    ratios.iter().position(|r| *r <= threshold).unwrap_or(ratios.len())
}

/// Linearly interpolated percentile of ascending `sorted`, `p` in [0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub iteration: usize,
    pub mean: f64,
    pub median: f64,
    /// (lower, upper) per entry of [`BAND_LEVELS`].
    pub bands: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStat {
    pub threshold: f64,
    pub per_batch: Vec<usize>,
    pub mean: f64,
    /// Batches that never reached the threshold.
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    /// `None` for the overflow bin.
    pub upper: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub batches: usize,
    pub failures: usize,
    pub bands: Vec<BandRow>,
    pub thresholds: Vec<ThresholdStat>,
    pub final_ratios: Vec<f64>,
    pub mean_final_ratio: f64,
    pub mean_activations: f64,
    pub mean_twin_evaluations: f64,
    pub mean_reinitializations: f64,
    /// Real-plant measurements over all batches, binned by optimality ratio.
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalRatio {
    pub gains: ControllerParams,
    pub ratio: f64,
    /// Batches per mode whose final incumbent ratio is below this baseline.
    pub beaten_by: Vec<(Mode, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub optimum_cost: f64,
    pub modes: Vec<ModeSummary>,
    pub nominal: Vec<NominalRatio>,
}

impl Summary {
    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

impl ModeSummary {
    pub fn threshold(&self, threshold: f64) -> Option<&ThresholdStat> {
        self.thresholds.iter().find(|t| t.threshold == threshold)
    }
}

pub fn histogram(ratios: &[f64]) -> Vec<HistogramBin> {
    let n = ((HISTOGRAM_HIGH - HISTOGRAM_LOW) / HISTOGRAM_WIDTH).round() as usize;
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|k| HistogramBin {
            lower: HISTOGRAM_LOW + k as f64 * HISTOGRAM_WIDTH,
            upper: Some(HISTOGRAM_LOW + (k + 1) as f64 * HISTOGRAM_WIDTH),
            count: 0,
        })
        .collect();
    bins.push(HistogramBin { lower: HISTOGRAM_HIGH, upper: None, count: 0 });
    for &r in ratios.iter().filter(|r| !r.is_nan()) {
        // noisy ratios below 1 land in the first bin
        let k = if r >= HISTOGRAM_HIGH { n } else { (((r - HISTOGRAM_LOW) / HISTOGRAM_WIDTH).floor().max(0.0)) as usize };
        bins[k.min(n)].count += 1;
    }
    bins
}

fn band_rows(runs: &[&BatchResult]) -> Vec<BandRow> {
    let len = runs.iter().map(|r| r.ratios.len()).min().unwrap_or(0);
    (0..len)
        .map(|m| {
            let col = sorted(runs.iter().map(|r| r.ratios[m]).collect());
            BandRow {
                iteration: m,
                mean: mean(&col),
                median: percentile(&col, 50.0),
                bands: BAND_LEVELS
                    .iter()
                    .map(|l| (percentile(&col, 50.0 - l / 2.0), percentile(&col, 50.0 + l / 2.0)))
                    .collect(),
            }
        })
        .collect()
}

fn mode_summary(mode: Mode, runs: &[&BatchResult], failures: usize, thresholds: &[f64], optimum_cost: f64) -> ModeSummary {
    let counts = |f: fn(&BatchResult) -> usize| mean(&runs.iter().map(|r| f(r) as f64).collect::<Vec<_>>());
    let final_ratios: Vec<f64> = runs.iter().map(|r| r.final_ratio()).collect();
    let measured: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.points.iter())
        .filter(|p| p.provenance == Provenance::RealPlant)
        .map(|p| p.cost / optimum_cost)
        .collect();
    ModeSummary {
        mode,
        batches: runs.len(),
        failures,
        bands: band_rows(runs),
        thresholds: thresholds
            .iter()
            .map(|&t| {
                let per_batch: Vec<usize> = runs.iter().map(|r| iterations_to_threshold(&r.ratios, t)).collect();
                ThresholdStat {
                    threshold: t,
                    mean: mean(&per_batch.iter().map(|&k| k as f64).collect::<Vec<_>>()),
                    censored: runs.iter().zip(&per_batch).filter(|(r, k)| **k >= r.ratios.len()).count(),
                    per_batch,
                }
            })
            .collect(),
        mean_final_ratio: mean(&final_ratios),
        final_ratios,
        mean_activations: counts(|r| r.activations),
        mean_twin_evaluations: counts(|r| r.twin_evaluations),
        mean_reinitializations: counts(|r| r.reinitializations),
        histogram: histogram(&measured),
    }
}

/// Per-mode statistics in the order modes first appear in the results. Batches are
/// taken in batch order; failed batches are only counted.
pub fn summarize(out: &MonteCarloOutput, thresholds: &[f64], nominal: &[(ControllerParams, f64)]) -> Summary {
    let mut modes: Vec<Mode> = Vec::new();
    for m in out.results.iter().map(|r| r.mode).chain(out.failures.iter().map(|f| f.mode)) {
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    let per_mode: Vec<ModeSummary> = modes
        .iter()
        .map(|&mode| {
            let mut runs: Vec<&BatchResult> = out.results.iter().filter(|r| r.mode == mode).collect();
            runs.sort_by_key(|r| r.batch);
            let failures = out.failures.iter().filter(|f| f.mode == mode).count();
            mode_summary(mode, &runs, failures, thresholds, out.optimum_cost)
        })
        .collect();
    let nominal = nominal
        .iter()
        .map(|&(gains, ratio)| NominalRatio {
            gains,
            ratio,
            beaten_by: per_mode
                .iter()
                .map(|s| (s.mode, s.final_ratios.iter().filter(|f| **f < ratio).count()))
                .collect(),
        })
        .collect();
    Summary { optimum_cost: out.optimum_cost, modes: per_mode, nominal }
}
