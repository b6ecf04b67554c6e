//! Digital-twin data, output-error identification of a fixed-order transfer function
//! and the fidelity / re-initialization checks.
//!
//! Every stored trace is a closed-loop step experiment, so the twin is scored by
//! placing it in the same PI loop with the recorded gains and references and
//! comparing its sampled output with the measured one.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{ContinuousTransferFunction, ControllerParams, LoopConfig, LoopSimulator, REFERENCE_DEAD_TIME};

/// Denominator guard for the relative cost discrepancy.
pub const DISCREPANCY_FLOOR: f64 = 1e-9;

/// One recorded closed-loop step experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinExperiment {
    pub gains: ControllerParams,
    pub r_low: f64,
    pub r_high: f64,
    pub times: Vec<f64>,
    pub control: Vec<f64>,
    pub output: Vec<f64>,
}

/// Ordered experiments sharing one loop configuration and sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinDataset {
    loop_cfg: LoopConfig,
    experiments: Vec<TwinExperiment>,
}

impl TwinDataset {
    /// The configuration's noise level is dropped: twins are simulated clean.
    pub fn new(loop_cfg: &LoopConfig) -> Result<Self> {
        loop_cfg.validate()?;
        Ok(Self { loop_cfg: LoopConfig { noise_std: 0.0, ..loop_cfg.clone() }, experiments: Vec::new() })
    }

    pub fn loop_config(&self) -> &LoopConfig {
        &self.loop_cfg
    }

    pub fn trace_length(&self) -> usize {
        self.loop_cfg.trace_length
    }

    pub fn experiments(&self) -> &[TwinExperiment] {
        &self.experiments
    }

    pub fn len(&self) -> usize {
        self.experiments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiments.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.len() * self.trace_length()
    }

    /// Appends a trace recorded with `gains` on the dataset's step references.
    pub fn append_experiment(
        &mut self,
        gains: ControllerParams,
        control: &[f64],
        output: &[f64],
        times: &[f64],
    ) -> Result<()> {
        let (r_low, r_high) = (self.loop_cfg.r_low, self.loop_cfg.r_high);
        self.append_with_references(gains, r_low, r_high, control, output, times)
    }

    pub fn append_with_references(
        &mut self,
        gains: ControllerParams,
        r_low: f64,
        r_high: f64,
        control: &[f64],
        output: &[f64],
        times: &[f64],
    ) -> Result<()> {
        let expected = self.trace_length();
        for len in [control.len(), output.len(), times.len()] {
            if len != expected {
                return Err(Error::TraceLength { expected, got: len });
            }
        }
        let grid = self.loop_cfg.sample_times();
        if grid.iter().zip(times).any(|(a, b)| (a - b).abs() > 1e-9 * self.loop_cfg.horizon.max(1.0)) {
            return Err(Error::InvalidConfig("trace sampling grid differs from the dataset grid".into()));
        }
        if control.iter().chain(output).any(|v| !v.is_finite()) || !r_low.is_finite() || !r_high.is_finite() {
            return Err(Error::NonFinite("twin trace"));
        }
        self.experiments.push(TwinExperiment {
            gains,
            r_low,
            r_high,
            times: times.to_vec(),
            control: control.to_vec(),
            output: output.to_vec(),
        });
        Ok(())
    }

    /// Drops everything but the most recent experiment.
    pub fn reset_to_latest(&mut self) {
        if self.experiments.len() > 1 {
            self.experiments.drain(..self.experiments.len() - 1);
        }
    }

    pub fn clear(&mut self) {
        self.experiments.clear();
    }

    fn experiment_config(&self, e: &TwinExperiment) -> LoopConfig {
        LoopConfig { r_low: e.r_low, r_high: e.r_high, ..self.loop_cfg.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinModel {
    pub plant: ContinuousTransferFunction,
    /// Output RMSE over all samples of the dataset the model was fitted to.
    pub fit_rmse: f64,
    pub model_order: usize,
    /// Set when the data do not pin down every parameter.
    pub ill_conditioned: bool,
    pub iterations: usize,
}

impl TwinModel {
    /// Multiplies the numerator and the first denominator coefficient below the
    /// leading one by `factor`, leaving `fit_rmse` untouched.
    pub fn degraded(&self, factor: f64) -> Result<Self> {
        let mut plant = self.plant.clone();
        plant.numerator.iter_mut().for_each(|b| *b *= factor);
        if plant.denominator.len() > 1 {
            plant.denominator[1] *= factor;
        }
        plant.validate()?;
        Ok(Self { plant, ..self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyOptions {
    /// Input delay of the twin, held fixed during fitting.
    pub dead_time: f64,
    pub max_iters: usize,
    /// Extra starting point, typically the previous twin.
    pub initial: Option<ContinuousTransferFunction>,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self { dead_time: REFERENCE_DEAD_TIME, max_iters: 200, initial: None }
    }
}

/// Simulated twin output on every experiment, `None` if the plant cannot be simulated
/// or diverges.
pub fn simulate_dataset(plant: &ContinuousTransferFunction, data: &TwinDataset) -> Option<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    for e in data.experiments() {
        let sim = LoopSimulator::new(plant, &data.experiment_config(e)).ok()?;
        let (y, diverged) = sim.clean_output(e.gains);
        if diverged || y.iter().any(|v| !v.is_finite()) {
            return None;
        }
        out.push(y);
    }
    Some(out)
}

/// Root mean square over all residuals of all experiments.
pub fn pooled_rmse(residuals: &[Vec<f64>]) -> f64 {
    let (sum, count) = residuals
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), r| (s + r * r, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Output RMSE of `plant` replayed on `data`; infinite when the twin cannot be simulated.
pub fn plant_rmse(plant: &ContinuousTransferFunction, data: &TwinDataset) -> f64 {
    match simulate_dataset(plant, data) {
        Some(sim) => {
            let res: Vec<Vec<f64>> = data
                .experiments()
                .iter()
                .zip(&sim)
                .map(|(e, ys)| e.output.iter().zip(ys).map(|(y, s)| y - s).collect())
                .collect();
            pooled_rmse(&res)
        }
        None => f64::INFINITY,
    }
}

pub fn fidelity_rmse(model: &TwinModel, data: &TwinDataset) -> f64 {
    plant_rmse(&model.plant, data)
}

/// Relative discrepancy test between the measured cost and the twin's estimate.
pub fn should_reinitialize(j_measured: f64, j_twin: f64, delta: f64) -> bool {
    (j_measured - j_twin).abs() / j_measured.abs().max(DISCREPANCY_FLOOR) > delta
}

/// Numerator of degree `order - 2` over a monic denominator of degree `order`.
#[derive(Debug, Clone, Copy)]
struct Parameterization {
    order: usize,
    dead_time: f64,
}

impl Parameterization {
    fn n_num(&self) -> usize {
        self.order - 1
    }

    fn to_plant(&self, p: &[f64]) -> Option<ContinuousTransferFunction> {
        let num = p[..self.n_num()].to_vec();
        let mut den = Vec::with_capacity(self.order + 1);
        den.push(1.0);
        den.extend_from_slice(&p[self.n_num()..]);
        ContinuousTransferFunction::new(num, den, self.dead_time).ok()
    }

    fn from_plant(&self, plant: &ContinuousTransferFunction) -> Option<Vec<f64>> {
        if plant.denominator_degree() != self.order {
            return None;
        }
        let a0 = plant.denominator[0];
        let mut num = vec![0.0; self.n_num()];
        let nb = plant.numerator.len();
        for (i, b) in plant.numerator.iter().enumerate() {
            let slot = self.n_num() as isize - (nb - i) as isize;
            if slot < 0 {
                if *b != 0.0 {
                    return None;
                }
                continue;
            }
            num[slot as usize] = b / a0;
        }
        num.extend(plant.denominator[1..].iter().map(|a| a / a0));
        Some(num)
    }
}

struct Problem<'a> {
    data: &'a TwinDataset,
    param: Parameterization,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        let plant = self.param.to_plant(p)?;
        let sim = simulate_dataset(&plant, self.data)?;
        let mut r = Vec::with_capacity(self.data.n_samples());
        for (e, ys) in self.data.experiments().iter().zip(&sim) {
            r.extend(e.output.iter().zip(ys).map(|(y, s)| y - s));
        }
        Some(DVector::from_vec(r))
    }

    fn jacobian(&self, p: &[f64], r0: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(r0.len(), p.len());
        let mut q = p.to_vec();
        for j in 0..p.len() {
            let h = 1e-6 * p[j].abs().max(1e-3);
            q[j] = p[j] + h;
            let plus = self.residuals(&q);
            q[j] = p[j] - h;
            let minus = self.residuals(&q);
            q[j] = p[j];
            let col = match (plus, minus) {
                (Some(a), Some(b)) => (a - b) / (2.0 * h),
                (Some(a), None) => (a - r0) / h,
                (None, Some(b)) => (r0 - b) / h,
                (None, None) => continue,
            };
            jac.set_column(j, &col);
        }
        jac
    }
}

struct LmResult {
    params: Vec<f64>,
    iterations: usize,
    ill_conditioned: bool,
}

/// Levenberg–Marquardt on the output residuals with Marquardt diagonal scaling.
fn levenberg_marquardt(problem: &Problem, start: Vec<f64>, max_iters: usize) -> Option<LmResult> {
    let mut p = start;
    let mut r = problem.residuals(&p)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut jac = problem.jacobian(&p, &r);
    for _ in 0..max_iters {
        iterations += 1;
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if g.amax() <= 1e-14 * (1.0 + cost) || cost == 0.0 {
            break;
        }
        let scale_floor = 1e-12 * a.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = a.clone();
            for i in 0..p.len() {
                damped[(i, i)] += lambda * a[(i, i)].max(scale_floor);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(r_new) = problem.residuals(&trial) {
                let c_new = r_new.norm_squared();
                if c_new < cost {
                    let small = step.iter().zip(&p).all(|(d, x)| d.abs() <= 1e-13 * x.abs().max(1e-3));
                    let stalled = cost - c_new <= 1e-15 * cost;
                    p = trial;
                    r = r_new;
                    cost = c_new;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = !(small || stalled);
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            break;
        }
        jac = problem.jacobian(&p, &r);
    }
    let output_scale = problem.data.experiments().iter().flat_map(|e| &e.output).map(|y| y * y).sum::<f64>().sqrt();
    let ill_conditioned = poorly_determined(&jac, &p, output_scale);
    Some(LmResult { params: p, iterations, ill_conditioned })
}

/// A parameter whose relative change barely moves the output, or a condition number of
/// the column-equilibrated normal matrix above 1e12.
fn poorly_determined(jac: &DMatrix<f64>, p: &[f64], output_scale: f64) -> bool {
    let norms: Vec<f64> = jac.column_iter().map(|c| c.norm()).collect();
    let floor = 1e-6 * output_scale.max(1.0);
    if norms.iter().zip(p).any(|(n, x)| !n.is_finite() || !(n * x.abs().max(1e-3) > floor)) {
        return true;
    }
    let mut scaled = jac.clone();
    for (j, n) in norms.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / n);
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    !(min > 0.0) || (max / min).powi(2) > 1e12
}

/// Second-order start from a least-squares ARX fit on the sampled traces, mapping the
/// discrete poles back through `s = ln(z) / Ts`.
fn arx_start(data: &TwinDataset) -> Option<Vec<f64>> {
    let ts = data.loop_config().sample_spacing();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for e in data.experiments() {
        let (y0, u0) = (e.output[0], e.control[0]);
        let y: Vec<f64> = e.output.iter().map(|v| v - y0).collect();
        let u: Vec<f64> = e.control.iter().map(|v| v - u0).collect();
        for k in 2..y.len() {
            rows.push([-y[k - 1], -y[k - 2], u[k - 1], u[k - 2]]);
            rhs.push(y[k]);
        }
    }
    if rows.len() < 4 {
        return None;
    }
    let phi = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j]);
    let theta = phi.svd(true, true).solve(&DVector::from_vec(rhs), 1e-12).ok()?;
    let (a1, a2, b1, b2) = (theta[0], theta[1], theta[2], theta[3]);
    let disc = Complex::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
    let z1 = (Complex::new(-a1, 0.0) + disc) / 2.0;
    let z2 = (Complex::new(-a1, 0.0) - disc) / 2.0;
    let s1 = z1.ln() / ts;
    let s2 = z2.ln() / ts;
    let c1 = -(s1 + s2).re;
    let c2 = (s1 * s2).re;
    let dc = (b1 + b2) / (1.0 + a1 + a2);
    let start = vec![c2 * dc, c1, c2];
    (start.iter().all(|v| v.is_finite() && *v > 0.0)).then_some(start)
}

/// Second-order start matching the initial steady state `y0 = G(0) u0`.
fn steady_state_start(data: &TwinDataset) -> Option<Vec<f64>> {
    let e = data.experiments().first()?;
    let dc = e.output[0] / e.control[0];
    let (a1, a2) = (4.0, 4.0);
    (dc.is_finite() && dc != 0.0).then(|| vec![dc * a2, a1, a2])
}

/// Multiplies numerator and denominator by `(s + p)^k`.
fn embed(plant: &ContinuousTransferFunction, order: usize) -> ContinuousTransferFunction {
    let extra = order - plant.denominator_degree();
    let p = plant.denominator.last().copied().unwrap_or(1.0).abs().sqrt().max(1e-3);
    let mul = |poly: &[f64]| {
        let mut out = poly.to_vec();
        for _ in 0..extra {
            let mut next = vec![0.0; out.len() + 1];
            for (i, c) in out.iter().enumerate() {
                next[i] += c;
                next[i + 1] += c * p;
            }
            out = next;
        }
        out
    };
    ContinuousTransferFunction {
        numerator: mul(&plant.numerator),
        denominator: mul(&plant.denominator),
        dead_time: plant.dead_time,
    }
}

pub fn identify(data: &TwinDataset, order: usize) -> Result<TwinModel> {
    identify_with(data, order, &IdentifyOptions::default())
}

/// Output-error fit of an order-`order` twin minimizing the squared output error over
/// every experiment. Orders above two start from the embedded second-order fit, so
/// their error never exceeds it.
pub fn identify_with(data: &TwinDataset, order: usize, opts: &IdentifyOptions) -> Result<TwinModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("twin identification needs at least one experiment"));
    }
    if !(2..=5).contains(&order) {
        return Err(Error::InvalidConfig(format!("twin order must be in 2..=5, got {order}")));
    }
    if !(opts.dead_time >= 0.0) || !opts.dead_time.is_finite() {
        return Err(Error::InvalidConfig("twin dead time must be non-negative".into()));
    }
    let param = Parameterization { order, dead_time: opts.dead_time };
    let problem = Problem { data, param };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(init) = &opts.initial {
        let init = ContinuousTransferFunction { dead_time: opts.dead_time, ..init.clone() };
        if let Some(p) = param.from_plant(&init) {
            starts.push(p);
        }
    }
    let mut lower_order_ill = false;
    if order == 2 {
        starts.extend(arx_start(data));
        starts.extend(steady_state_start(data));
    } else {
        let base_opts = IdentifyOptions {
            initial: opts.initial.as_ref().filter(|p| p.denominator_degree() == 2).cloned(),
            ..opts.clone()
        };
        let base = identify_with(data, 2, &base_opts)?;
        lower_order_ill = base.ill_conditioned;
        starts.extend(param.from_plant(&embed(&base.plant, order)));
    }

    let scored: Option<(Vec<f64>, f64)> = starts
        .into_iter()
        .filter_map(|s| problem.residuals(&s).map(|r| (s, r.norm_squared())))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let Some((start, _)) = scored else {
        return Err(Error::InvalidConfig("no simulable starting point for twin identification".into()));
    };

    let fit = levenberg_marquardt(&problem, start.clone(), opts.max_iters).unwrap_or(LmResult {
        params: start,
        iterations: 0,
        ill_conditioned: true,
    });
    let plant = param.to_plant(&fit.params).expect("accepted iterates are valid plants");
    let fit_rmse = plant_rmse(&plant, data);
    Ok(TwinModel {
        plant,
        fit_rmse,
        model_order: order,
        ill_conditioned: fit.ill_conditioned || (order == 2 && lower_order_ill),
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(plant: &ContinuousTransferFunction, gains: ControllerParams, cfg: &LoopConfig, data: &mut TwinDataset) {
        let sim = LoopSimulator::new(plant, cfg).unwrap();
        let t = sim.run_clean(gains);
        data.append_experiment(gains, &t.control, &t.output, &t.times).unwrap();
    }

    #[test]
    fn append_checks_length_and_keeps_order() {
        let cfg = LoopConfig::default();
        let mut d = TwinDataset::new(&cfg).unwrap();
        let t = cfg.sample_times();
        let a = vec![1.0; 100];
        let b = vec![2.0; 100];
        d.append_experiment(ControllerParams::new(0.5, 1.0), &a, &a, &t).unwrap();
        assert_eq!((d.len(), d.n_samples()), (1, 100));
        d.append_experiment(ControllerParams::new(0.6, 1.0), &b, &b, &t).unwrap();
        assert_eq!(d.experiments()[0].output[0], 1.0);
        assert_eq!(d.experiments()[1].output[0], 2.0);
        let err = d.append_experiment(ControllerParams::new(0.6, 1.0), &b[..99], &b[..99], &t[..99]);
        assert!(matches!(err, Err(Error::TraceLength { expected: 100, got: 99 })));
        d.reset_to_latest();
        assert_eq!(d.len(), 1);
        assert_eq!(d.experiments()[0].output[0], 2.0);
    }

    #[test]
    fn rmse_arithmetic() {
        assert_relative_eq!(pooled_rmse(&[vec![0.0, 2.0], vec![2.0, 2.0]]), 3f64.sqrt(), epsilon = 1e-15);
        assert_eq!(pooled_rmse(&[vec![0.0; 5]]), 0.0);
    }

    #[test]
    fn fidelity_of_true_plant_and_offset() {
        let plant = ContinuousTransferFunction::reference_plant();
        let cfg = LoopConfig::default();
        let mut d = TwinDataset::new(&cfg).unwrap();
        record(&plant, ControllerParams::new(0.54, 1.16), &cfg, &mut d);
        let model = TwinModel { plant: plant.clone(), fit_rmse: 0.0, model_order: 2, ill_conditioned: false, iterations: 0 };
        assert_eq!(fidelity_rmse(&model, &d), 0.0);
        let e = d.experiments()[0].clone();
        let mut shifted = TwinDataset::new(&cfg).unwrap();
        let y: Vec<f64> = e.output.iter().map(|v| v + 0.25).collect();
        shifted.append_experiment(e.gains, &e.control, &y, &e.times).unwrap();
        assert_relative_eq!(fidelity_rmse(&model, &shifted), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn reinitialization_rule() {
        assert!(!should_reinitialize(1.0, 1.0, 2.0));
        assert!(should_reinitialize(1.0, 4.0, 2.0));
        assert!(!should_reinitialize(1.0, 2.9, 2.0));
        assert!(!should_reinitialize(1e-15, 1e-15, 2.0));
        assert!(!should_reinitialize(1e-15, 1e-9, 2.0));
    }

    #[test]
    fn recovers_reference_plant() {
        let plant = ContinuousTransferFunction::reference_plant();
        let cfg = LoopConfig::default();
        let mut d = TwinDataset::new(&cfg).unwrap();
        record(&plant, ControllerParams::new(0.54, 1.16), &cfg, &mut d);
        let m = identify(&d, 2).unwrap();
        assert!(m.fit_rmse < 1e-6, "rmse {}", m.fit_rmse);
        for (got, want) in m.plant.numerator.iter().chain(&m.plant.denominator).zip([9.544, 1.0, 4.145, 4.199]) {
            assert_relative_eq!(*got, want, max_relative = 1e-3);
        }
        assert_relative_eq!(fidelity_rmse(&m, &d), m.fit_rmse, epsilon = 1e-10);
        assert!(!m.ill_conditioned);
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = LoopConfig::default();
        for _ in 0..3 {
            let truth = [9.544, 4.145, 4.199].map(|v| v * rng.random_range(0.5..1.5));
            let plant = ContinuousTransferFunction::second_order(truth[0], truth[1], truth[2], 0.002).unwrap();
            let mut d = TwinDataset::new(&cfg).unwrap();
            record(&plant, ControllerParams::new(rng.random_range(0.2..1.0), rng.random_range(0.9..2.0)), &cfg, &mut d);
            let m = identify(&d, 2).unwrap();
            assert!(m.fit_rmse < 1e-6, "rmse {} for {truth:?}", m.fit_rmse);
            let got = [m.plant.numerator[0], m.plant.denominator[1], m.plant.denominator[2]];
            for (g, t) in got.iter().zip(truth) {
                assert_relative_eq!(*g, t, max_relative = 1e-2);
            }
        }
    }

    #[test]
    fn fifth_order_never_worse() {
        let plant = ContinuousTransferFunction::reference_plant();
        let cfg = LoopConfig::default();
        let mut d = TwinDataset::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sim = LoopSimulator::new(&plant, &cfg).unwrap();
        let g = ControllerParams::new(0.8, 1.5);
        let t = sim.run(g, &mut rng);
        d.append_experiment(g, &t.control, &t.output, &t.times).unwrap();
        let m2 = identify(&d, 2).unwrap();
        let m5 = identify(&d, 5).unwrap();
        assert_eq!(m5.plant.denominator_degree(), 5);
        assert_eq!(m5.plant.numerator.len(), 4);
        assert!(m5.fit_rmse <= m2.fit_rmse + 1e-12, "{} > {}", m5.fit_rmse, m2.fit_rmse);
        assert!(m2.fit_rmse < 0.09);
    }

    #[test]
    fn order_of_experiments_does_not_matter() {
        let plant = ContinuousTransferFunction::reference_plant();
        let cfg = LoopConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sim = LoopSimulator::new(&plant, &cfg).unwrap();
        let traces: Vec<_> = [(0.4, 1.0), (0.9, 1.8)]
            .iter()
            .map(|&(kp, ki)| (ControllerParams::new(kp, ki), sim.run(ControllerParams::new(kp, ki), &mut rng)))
            .collect();
        let mut fwd = TwinDataset::new(&cfg).unwrap();
        let mut rev = TwinDataset::new(&cfg).unwrap();
        for (g, t) in &traces {
            fwd.append_experiment(*g, &t.control, &t.output, &t.times).unwrap();
        }
        for (g, t) in traces.iter().rev() {
            rev.append_experiment(*g, &t.control, &t.output, &t.times).unwrap();
        }
        let a = identify(&fwd, 2).unwrap();
        let b = identify(&rev, 2).unwrap();
        for (x, y) in a.plant.numerator.iter().chain(&a.plant.denominator).zip(b.plant.numerator.iter().chain(&b.plant.denominator)) {
            assert_relative_eq!(*x, *y, max_relative = 1e-6);
        }
    }

    #[test]
    fn constant_trace_is_flagged() {
        let cfg = LoopConfig { r_low: 100.0, r_high: 100.0, ..LoopConfig::default() };
        let mut d = TwinDataset::new(&cfg).unwrap();
        let t = cfg.sample_times();
        d.append_experiment(ControllerParams::new(0.5, 1.0), &vec![3.0; 100], &vec![100.0; 100], &t).unwrap();
        let m = identify(&d, 2).unwrap();
        assert!(m.ill_conditioned);
        assert!(m.fit_rmse.is_finite());
        assert_relative_eq!(m.fit_rmse, fidelity_rmse(&m, &d), epsilon = 1e-10);
    }

    #[test]
    fn degraded_twin_scales_parameters() {
        let m = TwinModel {
            plant: ContinuousTransferFunction::reference_plant(),
            fit_rmse: 0.01,
            model_order: 2,
            ill_conditioned: false,
            iterations: 0,
        };
        let d = m.degraded(3.0).unwrap();
        assert_relative_eq!(d.plant.numerator[0], 3.0 * 9.544);
        assert_relative_eq!(d.plant.denominator[1], 3.0 * 4.145);
        assert_eq!(d.plant.denominator[2], 4.199);
    }

    #[test]
    fn empty_and_bad_order_rejected() {
        let d = TwinDataset::new(&LoopConfig::default()).unwrap();
        assert!(matches!(identify(&d, 2), Err(Error::EmptyDataset(_))));
        let mut d = d;
        let t = LoopConfig::default().sample_times();
        d.append_experiment(ControllerParams::new(0.5, 1.0), &vec![1.0; 100], &vec![1.0; 100], &t).unwrap();
        assert!(identify(&d, 6).is_err());
        assert!(identify(&d, 1).is_err());
    }
}
