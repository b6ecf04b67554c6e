use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use guided_bo::tuner::GuidedBoConfig;
use guided_bo_bench::{
    cached_ground_truth, emit_results, ensure_writable, nominal_ratios, report, run_batch, run_monte_carlo,
    sweep_configs, BenchConfig, Mode, OptimumDefinition, Summary, Sweep,
};

/// Overrides the master seed of every command.
const SEED_ENV: &str = "GBO_SEED";

#[derive(Parser)]
#[command(name = "gbo", version, about = "Guided Bayesian optimization of PI gains on a simulated plant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single tuning run, printed as JSON.
    Tune {
        #[arg(long, default_value = "guided")]
        mode: Mode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Noise-free grid search for the optimum gains.
    GroundTruth {
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Monte Carlo comparison of the tuners.
    Bench {
        #[arg(long)]
        batches: Option<usize>,
        /// Comma-separated subset of bo, guided, forced, nominal.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
        /// `name=v1,v2,...`; each value gets its own subdirectory.
        #[arg(long)]
        sweep: Option<Sweep>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        grid: Option<usize>,
        /// Use the lowest measured cost instead of the grid-search optimum.
        #[arg(long)]
        min_measured_optimum: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the summary from a result directory.
    Report { dir: PathBuf },
}

/// A file with a `tuner` key is a bench configuration, anything else a tuner configuration.
fn load_config(path: Option<&Path>) -> anyhow::Result<BenchConfig> {
    let Some(path) = path else {
        return Ok(BenchConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("tuner").is_some() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(BenchConfig { tuner: serde_json::from_value::<GuidedBoConfig>(value)?, ..BenchConfig::default() })
    }
}

fn master_seed(cli: Option<u64>, cfg: u64) -> anyhow::Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(cli.unwrap_or(cfg)),
    }
}

fn print_summary(label: &str, s: &Summary) {
    if !label.is_empty() {
        println!("[{label}]");
    }
    println!("optimum cost {:.6}", s.optimum_cost);
    for m in &s.modes {
        let its: Vec<String> = m.thresholds.iter().map(|t| format!("phi<={}: {:.2} ({} censored)", t.threshold, t.mean, t.censored)).collect();
        println!(
            "{:>8}  batches {:>3}  failed {:>2}  final ratio {:.3}  activations {:.1}  {}",
            m.mode,
            m.batches,
            m.failures,
            m.mean_final_ratio,
            m.mean_activations,
            its.join("  ")
        );
    }
    for n in &s.nominal {
        println!("nominal ({:.2}, {:.2}) ratio {:.3}", n.gains.kp, n.gains.ki, n.ratio);
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Tune { mode, config, seed } => {
            let bench = load_config(config.as_deref())?;
            let cfg = GuidedBoConfig { rng_seed: master_seed(seed, bench.tuner.rng_seed)?, ..bench.tuner.clone() };
            let gt = guided_bo_bench::ground_truth_search(&cfg, bench.ground_truth_grid)?;
            let nominal = bench.nominal_gains.first().copied().unwrap_or(gt.theta);
            let result = run_batch(&cfg, mode, 0, cfg.rng_seed, gt.cost, nominal)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::GroundTruth { grid, config } => {
            let bench = load_config(config.as_deref())?;
            let gt = guided_bo_bench::ground_truth_search(&bench.tuner, grid)?;
            println!("{}", serde_json::to_string_pretty(&gt)?);
        }
        Command::Bench { batches, modes, sweep, out, workers, config, grid, min_measured_optimum, seed } => {
            let mut bench = load_config(config.as_deref())?;
            if let Some(b) = batches {
                bench.batches = b;
            }
            if let Some(m) = modes {
                bench.modes = m;
            }
            if sweep.is_some() {
                bench.sweep = sweep;
            }
            if let Some(o) = out {
                bench.output_dir = o;
            }
            if let Some(w) = workers {
                bench.workers = w;
            }
            if let Some(g) = grid {
                bench.ground_truth_grid = g;
            }
            if min_measured_optimum {
                bench.optimum = OptimumDefinition::MinMeasured;
            }
            bench.tuner.rng_seed = master_seed(seed, bench.tuner.rng_seed)?;
            bench.validate()?;

            let runs = sweep_configs(&bench)?;
            let dirs: Vec<PathBuf> =
                runs.iter().map(|(label, _)| if label.is_empty() { bench.output_dir.clone() } else { bench.output_dir.join(label) }).collect();
            for d in &dirs {
                ensure_writable(d).with_context(|| format!("output directory {}", d.display()))?;
            }
            for ((label, cfg), dir) in runs.iter().zip(&dirs) {
                cfg.validate()?;
                let gt = cached_ground_truth(&cfg.tuner, cfg.ground_truth_grid, &bench.output_dir.join("ground_truth.json"))?;
                let mc = run_monte_carlo(cfg, &gt)?;
                for f in &mc.failures {
                    eprintln!("batch {} ({}) failed: {}", f.batch, f.mode, f.error);
                }
                let nominal = nominal_ratios(cfg, mc.optimum_cost)?;
                let summary = emit_results(&mc, cfg, &nominal, dir)?;
                print_summary(label, &summary);
            }
        }
        Command::Report { dir } => {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
            let summary = report(&dir)?;
            std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            print_summary("", &summary);
        }
    }
    Ok(())
}
