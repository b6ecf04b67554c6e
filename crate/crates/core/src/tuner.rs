//! Plain and guided BO drivers.
//!
//! A run owns four RNG streams split from the master seed (initial design, real-plant
//! measurement noise, twin cost noise, GP restarts), so switching the twin on or off
//! never changes what the real plant sees for the same queries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::acquisition::{next_query, twin_should_stop, AcquisitionGrid, EiHistory, Query};
use crate::design::latin_hypercube_unit;
use crate::error::{Error, Result};
use crate::gp::{FitOptions, GpModel};
use crate::lti::{ContinuousTransferFunction, ControllerParams, FeasibleSet, LoopConfig, LoopSimulator, Trajectory};
use crate::metrics::{aggregate_cost, clean_cost, CostWeights, StepMetrics};
use crate::rng::{stream_rng, Stream};
use crate::twin::{identify_with, should_reinitialize, IdentifyOptions, TwinDataset, TwinModel};

/// GP noise variance used when the configured cost noise is zero.
const MIN_GP_NOISE_VARIANCE: f64 = 1e-10;

/// Stratified sample of `n` gains, one per stratum along each axis.
pub fn latin_hypercube_with<R: Rng + ?Sized>(feasible: &FeasibleSet, n: usize, rng: &mut R) -> Vec<ControllerParams> {
    latin_hypercube_unit(n, 2, rng).into_iter().map(|u| feasible.denormalize([u[0], u[1]])).collect()
}

/// Initial design drawn from the design stream of `seed`.
pub fn latin_hypercube(feasible: &FeasibleSet, n: usize, seed: u64) -> Vec<ControllerParams> {
    latin_hypercube_with(feasible, n, &mut stream_rng(seed, Stream::InitialDesign))
}

/// Result of one closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub cost: f64,
    pub metrics: StepMetrics,
    pub trajectory: Trajectory,
}

/// Something that can be run at a gain pair: the real plant, a simulation of it, or a mock.
pub trait Experiment {
    fn measure(&mut self, theta: ControllerParams, rng: &mut ChaCha8Rng) -> Result<Measurement>;
}

/// Simulated plant whose cost is computed from the noisy sampled output.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    sim: LoopSimulator,
    weights: CostWeights,
}

impl SimulatedPlant {
    pub fn new(plant: &ContinuousTransferFunction, loop_cfg: &LoopConfig, weights: CostWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self { sim: LoopSimulator::new(plant, loop_cfg)?, weights })
    }

    pub fn from_config(cfg: &GuidedBoConfig) -> Result<Self> {
        Self::new(&cfg.plant, &cfg.loop_cfg, cfg.weights)
    }

    pub fn simulator(&self) -> &LoopSimulator {
        &self.sim
    }
}

impl Experiment for SimulatedPlant {
    fn measure(&mut self, theta: ControllerParams, rng: &mut ChaCha8Rng) -> Result<Measurement> {
        let cfg = self.sim.config();
        let trajectory = self.sim.run(theta, rng);
        let metrics = StepMetrics::from_trajectory(&trajectory, cfg.r_low, cfg.r_high);
        Ok(Measurement { cost: aggregate_cost(&metrics, &self.weights), metrics, trajectory })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RealPlant,
    Twin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataEntry {
    pub theta: ControllerParams,
    pub cost: f64,
    pub provenance: Provenance,
}

/// GP training data with the origin of every cost.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningDataset {
    pub entries: Vec<DataEntry>,
}

impl TuningDataset {
    pub fn push(&mut self, theta: ControllerParams, cost: f64, provenance: Provenance) {
        self.entries.push(DataEntry { theta, cost, provenance });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn twin_count(&self) -> usize {
        self.entries.iter().filter(|e| e.provenance == Provenance::Twin).count()
    }

    pub fn evict_twin(&mut self) {
        self.entries.retain(|e| e.provenance == Provenance::RealPlant);
    }

    /// Lowest-cost entry of any provenance; the first one wins ties.
    pub fn best(&self) -> Option<&DataEntry> {
        self.entries.iter().fold(None, |acc: Option<&DataEntry>, e| match acc {
            Some(b) if b.cost <= e.cost => Some(b),
            _ => Some(e),
        })
    }

    pub fn best_real(&self) -> Option<&DataEntry> {
        self.entries
            .iter()
            .filter(|e| e.provenance == Provenance::RealPlant)
            .fold(None, |acc: Option<&DataEntry>, e| match acc {
                Some(b) if b.cost <= e.cost => Some(b),
                _ => Some(e),
            })
    }

    fn training_set(&self, feasible: &FeasibleSet) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = self.entries.iter().map(|e| feasible.normalize(e.theta).to_vec()).collect();
        let y = self.entries.iter().map(|e| e.cost).collect();
        (x, y)
    }
}

/// Calendar-driven activation: a twin session of exactly `session_length` steps before
/// every `every`-th real iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedSchedule {
    pub every: usize,
    pub session_length: usize,
}

/// Thresholds may be infinite; JSON carries those as the string `"inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.trim().parse::<f64>().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidedBoConfig {
    /// Posterior standard deviation above which the twin is considered.
    #[serde(with = "extended_f64")]
    pub eta1: f64,
    /// Twin output RMSE below which it may be used.
    #[serde(with = "extended_f64")]
    pub eta2: f64,
    /// EI ratio ending a twin session.
    pub eta3: f64,
    /// Relative cost discrepancy that resets the twin dataset.
    pub delta_tilde: f64,
    pub n_ei: usize,
    /// Real experiments after the initial design.
    pub n_max: usize,
    pub n0: usize,
    /// Cost noise standard deviation: GP noise level and twin cost perturbation.
    pub noise_std: f64,
    pub grid_resolution: usize,
    pub twin_order: usize,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub feasible: FeasibleSet,
    pub weights: CostWeights,
    pub rng_seed: u64,
    pub forced_schedule: Option<ForcedSchedule>,
    /// Plant simulated as the real system; also supplies the twin's dead time.
    pub plant: ContinuousTransferFunction,
    /// Multiplies the identified twin's numerator and first denominator coefficient.
    pub twin_degradation: Option<f64>,
    pub gp_starts: usize,
    /// Subtract the mean training cost before fitting, i.e. a constant prior mean.
    pub center_costs: bool,
}

impl Default for GuidedBoConfig {
    fn default() -> Self {
        Self {
            eta1: 3.0,
            eta2: 0.09,
            eta3: 0.2,
            delta_tilde: 2.0,
            n_ei: 3,
            n_max: 35,
            n0: 1,
            noise_std: 0.03,
            grid_resolution: 100,
            twin_order: 2,
            loop_cfg: LoopConfig::default(),
            feasible: FeasibleSet::default(),
            weights: CostWeights::default(),
            rng_seed: 0,
            forced_schedule: None,
            plant: ContinuousTransferFunction::reference_plant(),
            twin_degradation: None,
            gp_starts: 8,
            center_costs: true,
        }
    }
}

impl GuidedBoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.eta1 >= 0.0) {
            return fail("eta1 must be non-negative");
        }
        if !(self.eta2 > 0.0) {
            return fail("eta2 must be positive");
        }
        if !(self.eta3 > 0.0) || !self.eta3.is_finite() {
            return fail("eta3 must be positive");
        }
        if !(self.delta_tilde > 0.0) {
            return fail("delta_tilde must be positive");
        }
        if self.n0 < 1 {
            return fail("n0 must be at least 1");
        }
        if self.n_ei < 1 {
            return fail("n_ei must be at least 1");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return fail("noise_std must be non-negative");
        }
        if self.grid_resolution < 2 {
            return fail("grid_resolution must be at least 2");
        }
        if !(2..=5).contains(&self.twin_order) {
            return fail("twin_order must be in 2..=5");
        }
        if self.gp_starts < 1 {
            return fail("gp_starts must be at least 1");
        }
        if let Some(s) = self.forced_schedule {
            if s.every < 1 {
                return fail("forced schedule period must be at least 1");
            }
        }
        if let Some(f) = self.twin_degradation {
            if !f.is_finite() || f == 0.0 {
                return fail("twin_degradation must be finite and non-zero");
            }
        }
        self.loop_cfg.validate()?;
        self.feasible.validate()?;
        self.weights.validate()?;
        self.plant.validate()
    }

    fn gp_noise_variance(&self) -> f64 {
        (self.noise_std * self.noise_std).max(MIN_GP_NOISE_VARIANCE)
    }
}

/// Both activation conditions: uncertain enough and a faithful enough twin.
pub fn activation_decision(posterior_std: f64, twin_rmse: f64, eta1: f64, eta2: f64) -> bool {
    posterior_std > eta1 && twin_rmse < eta2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    /// Real iteration the record belongs to; 0 for the initial design. Twin records
    /// carry the index of the real iteration they precede.
    pub iteration: usize,
    pub theta: ControllerParams,
    pub cost: f64,
    pub provenance: Provenance,
    /// Posterior standard deviation at the EI query of this step, if one was made.
    pub posterior_std: Option<f64>,
    pub ei: Option<f64>,
    /// For real records: whether a twin session ran before this measurement.
    pub twin_activated: bool,
    /// For real records: twin evaluations in the preceding session. For twin records:
    /// position within the session, starting at 1.
    pub session_length: usize,
    /// Best real-plant cost measured so far.
    pub incumbent: f64,
    /// The twin dataset was reset after this measurement.
    pub reinitialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunerMode {
    Bo,
    Guided,
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningHistory {
    pub mode: TunerMode,
    pub records: Vec<TuningRecord>,
    pub best_theta: ControllerParams,
    pub best_cost: f64,
    pub activations: usize,
    pub twin_evaluations: usize,
    pub reinitializations: usize,
}

impl TuningHistory {
    pub fn real_records(&self) -> impl Iterator<Item = &TuningRecord> {
        self.records.iter().filter(|r| r.provenance == Provenance::RealPlant)
    }

    pub fn twin_records(&self) -> impl Iterator<Item = &TuningRecord> {
        self.records.iter().filter(|r| r.provenance == Provenance::Twin)
    }

    /// `(theta, cost)` of every real measurement in order.
    pub fn real_sequence(&self) -> Vec<(ControllerParams, f64)> {
        self.real_records().map(|r| (r.theta, r.cost)).collect()
    }

    /// Incumbent after the initial design (index 0) and after each real iteration.
    pub fn incumbent_curve(&self) -> Vec<f64> {
        let mut curve: Vec<f64> = Vec::new();
        for r in self.real_records() {
            if r.iteration >= curve.len() {
                curve.push(r.incumbent);
            } else {
                curve[r.iteration] = r.incumbent;
            }
        }
        curve
    }
}

pub fn run_bo<E: Experiment + ?Sized>(plant: &mut E, cfg: &GuidedBoConfig) -> Result<TuningHistory> {
    Tuner::new(cfg, TunerMode::Bo)?.run(plant)
}

pub fn run_guided_bo<E: Experiment + ?Sized>(plant: &mut E, cfg: &GuidedBoConfig) -> Result<TuningHistory> {
    Tuner::new(cfg, TunerMode::Guided)?.run(plant)
}

pub fn run_forced_schedule<E: Experiment + ?Sized>(plant: &mut E, cfg: &GuidedBoConfig) -> Result<TuningHistory> {
    if cfg.forced_schedule.is_none() {
        return Err(Error::InvalidConfig("forced schedule run without a schedule".into()));
    }
    Tuner::new(cfg, TunerMode::Forced)?.run(plant)
}

pub fn run_mode<E: Experiment + ?Sized>(plant: &mut E, cfg: &GuidedBoConfig, mode: TunerMode) -> Result<TuningHistory> {
    match mode {
        TunerMode::Bo => run_bo(plant, cfg),
        TunerMode::Guided => run_guided_bo(plant, cfg),
        TunerMode::Forced => run_forced_schedule(plant, cfg),
    }
}

struct Tuner<'a> {
    cfg: &'a GuidedBoConfig,
    mode: TunerMode,
    grid: AcquisitionGrid,
    fit_opts: FitOptions,
    measure_rng: ChaCha8Rng,
    twin_rng: ChaCha8Rng,
    twin_noise: Option<Normal<f64>>,
    data: TuningDataset,
    twin_data: TwinDataset,
    twin: Option<TwinModel>,
    records: Vec<TuningRecord>,
    activations: usize,
    twin_evaluations: usize,
    reinitializations: usize,
}

impl<'a> Tuner<'a> {
    fn new(cfg: &'a GuidedBoConfig, mode: TunerMode) -> Result<Self> {
        cfg.validate()?;
        let gp_seed: u64 = stream_rng(cfg.rng_seed, Stream::GpStarts).random();
        let twin_noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).expect("valid noise std"));
        Ok(Self {
            cfg,
            mode,
            grid: AcquisitionGrid::square(&cfg.feasible, cfg.grid_resolution),
            fit_opts: FitOptions { n_starts: cfg.gp_starts, seed: gp_seed, ..FitOptions::default() },
            measure_rng: stream_rng(cfg.rng_seed, Stream::Measurement),
            twin_rng: stream_rng(cfg.rng_seed, Stream::TwinNoise),
            twin_noise,
            data: TuningDataset::default(),
            twin_data: TwinDataset::new(&cfg.loop_cfg)?,
            twin: None,
            records: Vec::new(),
            activations: 0,
            twin_evaluations: 0,
            reinitializations: 0,
        })
    }

    fn run<E: Experiment + ?Sized>(mut self, plant: &mut E) -> Result<TuningHistory> {
        let design = latin_hypercube(&self.cfg.feasible, self.cfg.n0, self.cfg.rng_seed);
        for theta in design {
            self.measure(plant, theta, 0, None, 0)?;
        }
        for m in 1..=self.cfg.n_max {
            let query = self.query()?;
            let session = if self.wants_twin(m, &query) { self.try_activate()? } else { None };
            let (theta, evals) = match session {
                Some(limit) => {
                    self.activations += 1;
                    let evals = self.twin_session(m, query, limit)?;
                    let best = self.data.best().expect("dataset is non-empty").theta;
                    self.data.evict_twin();
                    (best, Some(evals))
                }
                None => (query.theta, None),
            };
            self.measure(plant, theta, m, Some(query), evals.unwrap_or(0))?;
            if let Some(r) = self.records.last_mut() {
                r.twin_activated = evals.is_some();
            }
        }
        let best = *self.data.best_real().expect("at least one real measurement");
        Ok(TuningHistory {
            mode: self.mode,
            records: self.records,
            best_theta: best.theta,
            best_cost: best.cost,
            activations: self.activations,
            twin_evaluations: self.twin_evaluations,
            reinitializations: self.reinitializations,
        })
    }

    /// GP on costs shifted by their sample mean, together with that shift.
    fn fit(&self) -> Result<(GpModel, f64)> {
        let (x, mut y) = self.data.training_set(&self.cfg.feasible);
        let offset = if self.cfg.center_costs { y.iter().sum::<f64>() / y.len() as f64 } else { 0.0 };
        y.iter_mut().for_each(|v| *v -= offset);
        Ok((GpModel::fit(&x, &y, self.cfg.gp_noise_variance(), &self.fit_opts)?, offset))
    }

    fn query(&self) -> Result<Query> {
        let (gp, offset) = self.fit()?;
        let best = self.data.best().expect("dataset is non-empty").cost;
        Ok(next_query(&gp, &self.grid, best - offset))
    }

    fn wants_twin(&self, m: usize, query: &Query) -> bool {
        match self.mode {
            TunerMode::Bo => false,
            TunerMode::Guided => query.std > self.cfg.eta1,
            TunerMode::Forced => {
                let every = self.cfg.forced_schedule.map_or(usize::MAX, |s| s.every);
                m % every == 0
            }
        }
    }

    /// Re-identifies the twin and applies the fidelity gate. Returns the session budget
    /// (`None` for the EI-ratio rule) wrapped in `Some` when the twin may be used.
    fn try_activate(&mut self) -> Result<Option<Option<usize>>> {
        let opts = IdentifyOptions {
            dead_time: self.cfg.plant.dead_time,
            initial: self.twin.as_ref().map(|t| t.plant.clone()),
            ..IdentifyOptions::default()
        };
        let Ok(mut model) = identify_with(&self.twin_data, self.cfg.twin_order, &opts) else {
            return Ok(None);
        };
        if let Some(f) = self.cfg.twin_degradation {
            model = model.degraded(f)?;
        }
        let usable = model.fit_rmse < self.cfg.eta2 && self.twin_simulator(&model).is_some();
        self.twin = Some(model);
        if !usable {
            return Ok(None);
        }
        Ok(Some(match self.mode {
            TunerMode::Forced => self.cfg.forced_schedule.map(|s| s.session_length),
            _ => None,
        }))
    }

    fn twin_simulator(&self, model: &TwinModel) -> Option<LoopSimulator> {
        let cfg = LoopConfig { noise_std: 0.0, ..self.cfg.loop_cfg.clone() };
        LoopSimulator::new(&model.plant, &cfg).ok()
    }

    /// Clean twin cost plus one draw of cost noise.
    fn twin_cost(&mut self, sim: &LoopSimulator, theta: ControllerParams) -> f64 {
        let (j, _) = clean_cost(sim, theta, &self.cfg.weights);
        match &self.twin_noise {
            Some(n) => j + n.sample(&mut self.twin_rng),
            None => j,
        }
    }

    fn twin_session(&mut self, m: usize, first: Query, budget: Option<usize>) -> Result<usize> {
        let model = self.twin.clone().expect("twin identified before a session");
        let sim = self.twin_simulator(&model).expect("usable twin simulates");
        let mut history = EiHistory::default();
        history.push(first.ei);
        let mut query = first;
        let mut evals = 0;
        loop {
            let done = match budget {
                Some(n) => evals >= n,
                None => twin_should_stop(&history, self.cfg.eta3, self.cfg.n_ei, evals + 1, self.cfg.n_max),
            };
            if done {
                break;
            }
            let cost = self.twin_cost(&sim, query.theta);
            self.data.push(query.theta, cost, Provenance::Twin);
            evals += 1;
            self.twin_evaluations += 1;
            self.records.push(TuningRecord {
                iteration: m,
                theta: query.theta,
                cost,
                provenance: Provenance::Twin,
                posterior_std: Some(query.std),
                ei: Some(query.ei),
                twin_activated: true,
                session_length: evals,
                incumbent: self.data.best_real().map_or(f64::INFINITY, |e| e.cost),
                reinitialized: false,
            });
            query = self.query()?;
            history.push(query.ei);
        }
        Ok(evals)
    }

    fn measure<E: Experiment + ?Sized>(
        &mut self,
        plant: &mut E,
        theta: ControllerParams,
        m: usize,
        query: Option<Query>,
        session_length: usize,
    ) -> Result<()> {
        debug_assert_eq!(self.data.twin_count(), 0);
        let meas = plant
            .measure(theta, &mut self.measure_rng)
            .map_err(|e| Error::Experiment { iteration: m, source: Box::new(e) })?;
        if !meas.cost.is_finite() {
            return Err(Error::Experiment { iteration: m, source: Box::new(Error::NonFinite("measured cost")) });
        }
        self.data.push(theta, meas.cost, Provenance::RealPlant);
        let mut reinitialized = false;
        if self.mode != TunerMode::Bo {
            let t = &meas.trajectory;
            self.twin_data.append_experiment(theta, &t.control, &t.output, &t.times)?;
            // the twin from before this measurement predicts its cost
            if let Some(model) = self.twin.clone() {
                if let Some(sim) = self.twin_simulator(&model) {
                    let j_twin = self.twin_cost(&sim, theta);
                    if should_reinitialize(meas.cost, j_twin, self.cfg.delta_tilde) {
                        self.twin_data.reset_to_latest();
                        self.reinitializations += 1;
                        reinitialized = true;
                    }
                }
            }
        }
        self.records.push(TuningRecord {
            iteration: m,
            theta,
            cost: meas.cost,
            provenance: Provenance::RealPlant,
            posterior_std: query.map(|q| q.std),
            ei: query.map(|q| q.ei),
            twin_activated: false,
            session_length,
            incumbent: self.data.best_real().map_or(f64::INFINITY, |e| e.cost),
            reinitialized,
        });
        Ok(())
    }
}
