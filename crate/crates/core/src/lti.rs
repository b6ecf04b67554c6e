//! Continuous LTI plants, zero-order-hold discretization and the unit-feedback
//! PI loop used for every experiment (real plant and twin alike).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identified DC-motor speed loop: gain, damping and stiffness coefficients, input delay.
pub const REFERENCE_GAIN: f64 = 9.544;
pub const REFERENCE_A1: f64 = 4.145;
pub const REFERENCE_A2: f64 = 4.199;
pub const REFERENCE_DEAD_TIME: f64 = 0.002;

/// Rational transfer function in `s` (descending powers) with an input dead time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTransferFunction {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub dead_time: f64,
}

impl ContinuousTransferFunction {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>, dead_time: f64) -> Result<Self> {
        let tf = Self { numerator, denominator, dead_time };
        tf.validate()?;
        Ok(tf)
    }

    /// `gain / (s^2 + a1 s + a2) * exp(-dead_time s)`
    pub fn second_order(gain: f64, a1: f64, a2: f64, dead_time: f64) -> Result<Self> {
        Self::new(vec![gain], vec![1.0, a1, a2], dead_time)
    }

    /// The identified plant used throughout the numerical studies.
    pub fn reference_plant() -> Self {
        Self::second_order(REFERENCE_GAIN, REFERENCE_A1, REFERENCE_A2, REFERENCE_DEAD_TIME)
            .expect("reference plant is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.numerator.iter().chain(&self.denominator).any(|c| !c.is_finite())
            || !self.dead_time.is_finite()
        {
            return Err(Error::NonFinite("transfer function coefficients"));
        }
        match self.denominator.first() {
            None => return Err(Error::InvalidTransferFunction("empty denominator".into())),
            Some(&a0) if a0 == 0.0 => {
                return Err(Error::InvalidTransferFunction(
                    "leading denominator coefficient is zero".into(),
                ))
            }
            _ => {}
        }
        if self.numerator.is_empty() {
            return Err(Error::InvalidTransferFunction("empty numerator".into()));
        }
        if self.numerator_degree() > self.denominator_degree() {
            return Err(Error::InvalidTransferFunction("improper transfer function".into()));
        }
        if self.dead_time < 0.0 {
            return Err(Error::InvalidTransferFunction("negative dead time".into()));
        }
        Ok(())
    }

    pub fn denominator_degree(&self) -> usize {
        self.denominator.len().saturating_sub(1)
    }

    /// Degree ignoring leading zero coefficients.
    pub fn numerator_degree(&self) -> usize {
        let lead = self.numerator.iter().position(|&c| c != 0.0).unwrap_or(self.numerator.len() - 1);
        self.numerator.len() - 1 - lead
    }

    /// `G(0)`; infinite for plants with a pole at the origin.
    pub fn dc_gain(&self) -> f64 {
        let b = *self.numerator.last().unwrap_or(&0.0);
        let a = *self.denominator.last().unwrap_or(&0.0);
        b / a
    }

    /// Controllable canonical realization `(A, B, C, D)` of the rational part.
    pub fn state_space(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let n = self.denominator_degree();
        let a0 = self.denominator[0];
        let den: Vec<f64> = self.denominator.iter().map(|c| c / a0).collect();
        let mut num = vec![0.0; n + 1];
        for (i, c) in self.numerator.iter().rev().take(n + 1).enumerate() {
            num[n - i] = c / a0;
        }
        let d = num[0];
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        if n > 0 {
            for i in 0..n - 1 {
                a[(i, i + 1)] = 1.0;
            }
            for j in 0..n {
                a[(n - 1, j)] = -den[n - j];
                c[j] = num[n - j] - d * den[n - j];
            }
            b[n - 1] = 1.0;
        }
        (a, b, c, d)
    }

    pub fn is_stable(&self) -> bool {
        let (a, _, _, _) = self.state_space();
        if a.nrows() == 0 {
            return true;
        }
        a.complex_eigenvalues().iter().all(|l| l.re < 0.0)
    }
}

/// Zero-order-hold equivalent: discrete state-space filter plus an integer sample delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTransferFunction {
    pub ad: DMatrix<f64>,
    pub bd: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub delay: usize,
    /// `dead_time - delay * dt`, the part of the dead time not representable on the grid.
    pub delay_residual: f64,
    pub dt: f64,
}

impl DiscreteTransferFunction {
    pub fn order(&self) -> usize {
        self.ad.nrows()
    }

    pub fn dc_gain(&self) -> f64 {
        let n = self.order();
        if n == 0 {
            return self.d;
        }
        let m = DMatrix::identity(n, n) - &self.ad;
        match m.lu().solve(&self.bd) {
            Some(x) => self.c.dot(&x) + self.d,
            None => f64::INFINITY,
        }
    }

    /// Denominator `z^n + a1 z^(n-1) + ...` and numerator (descending powers of `z`)
    /// of the rational part, via the Faddeev-LeVerrier recursion.
    pub fn polynomials(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.order();
        if n == 0 {
            return (vec![self.d], vec![1.0]);
        }
        let mut den = vec![0.0; n + 1];
        den[0] = 1.0;
        let mut num = vec![0.0; n + 1];
        let ident = DMatrix::<f64>::identity(n, n);
        let mut m = DMatrix::<f64>::zeros(n, n);
        for k in 1..=n {
            m = &self.ad * &m + &ident * den[k - 1];
            // adj(zI - A) = sum_k M_k z^(n-k)
            num[k] = self.c.dot(&(&m * &self.bd));
            den[k] = -(&self.ad * &m).trace() / k as f64;
        }
        for (ni, di) in num.iter_mut().zip(&den) {
            *ni += self.d * di;
        }
        (num, den)
    }

    /// Open-loop response to a unit step applied at sample 0, `n` samples long.
    pub fn step_response(&self, n: usize) -> Vec<f64> {
        let order = self.order();
        let mut x = vec![0.0; order];
        let mut next = vec![0.0; order];
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let u = if k >= self.delay { 1.0 } else { 0.0 };
            let y: f64 = self.c.iter().zip(&x).map(|(c, x)| c * x).sum::<f64>() + self.d * u;
            out.push(y);
            advance(&self.ad, &self.bd, &x, u, &mut next);
            std::mem::swap(&mut x, &mut next);
        }
        out
    }
}

#[inline]
fn advance(ad: &DMatrix<f64>, bd: &DVector<f64>, x: &[f64], u: f64, out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let mut acc = bd[i] * u;
        for j in 0..n {
            acc += ad[(i, j)] * x[j];
        }
        out[i] = acc;
    }
}

pub fn discretize_zoh(tf: &ContinuousTransferFunction, dt: f64) -> Result<DiscreteTransferFunction> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("sample time must be positive, got {dt}")));
    }
    tf.validate()?;
    let (a, b, c, d) = tf.state_space();
    let n = a.nrows();
    let (ad, bd) = if n == 0 {
        (DMatrix::zeros(0, 0), DVector::zeros(0))
    } else {
        // exp([[A, B], [0, 0]] dt) = [[Ad, Bd], [0, I]]
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&a * dt));
        aug.view_mut((0, n), (n, 1)).copy_from(&(&b * dt));
        let e = aug.exp();
        (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, 1)).column(0).into_owned())
    };
    if ad.iter().chain(bd.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("discretized plant"));
    }
    let delay = (tf.dead_time / dt).round() as usize;
    Ok(DiscreteTransferFunction {
        ad,
        bd,
        c,
        d,
        delay,
        delay_residual: tf.dead_time - delay as f64 * dt,
        dt,
    })
}

/// PI gains of `C(s) = kp (1 + ki / s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub kp: f64,
    pub ki: f64,
}

impl ControllerParams {
    pub const fn new(kp: f64, ki: f64) -> Self {
        Self { kp, ki }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.kp, self.ki]
    }
}

/// Axis-aligned box of admissible gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub kp_min: f64,
    pub kp_max: f64,
    pub ki_min: f64,
    pub ki_max: f64,
}

impl Default for FeasibleSet {
    fn default() -> Self {
        Self { kp_min: 0.11, kp_max: 1.10, ki_min: 0.87, ki_max: 2.08 }
    }
}

impl FeasibleSet {
    pub fn new(kp_min: f64, kp_max: f64, ki_min: f64, ki_max: f64) -> Result<Self> {
        let set = Self { kp_min, kp_max, ki_min, ki_max };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.kp_min, self.kp_max, self.ki_min, self.ki_max].iter().all(|v| v.is_finite())
            && self.kp_min < self.kp_max
            && self.ki_min < self.ki_max;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("degenerate feasible set {self:?}")))
        }
    }

    pub fn contains(&self, p: ControllerParams) -> bool {
        (self.kp_min..=self.kp_max).contains(&p.kp) && (self.ki_min..=self.ki_max).contains(&p.ki)
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.kp_min, self.ki_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.kp_max, self.ki_max]
    }

    /// Maps gains to the unit square.
    pub fn normalize(&self, p: ControllerParams) -> [f64; 2] {
        [
            (p.kp - self.kp_min) / (self.kp_max - self.kp_min),
            (p.ki - self.ki_min) / (self.ki_max - self.ki_min),
        ]
    }

    pub fn denormalize(&self, u: [f64; 2]) -> ControllerParams {
        ControllerParams::new(
            self.kp_min + u[0] * (self.kp_max - self.kp_min),
            self.ki_min + u[1] * (self.ki_max - self.ki_min),
        )
    }
}

/// Step experiment settings shared by the real plant and the twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub sim_step: f64,
    pub horizon: f64,
    pub r_low: f64,
    pub r_high: f64,
    pub noise_std: f64,
    pub trace_length: usize,
    pub rng_seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            sim_step: 1e-3,
            horizon: 5.0,
            r_low: 245.0,
            r_high: 306.0,
            noise_std: 0.03,
            trace_length: 100,
            rng_seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.sim_step > 0.0) || !self.sim_step.is_finite() {
            return fail("sim_step must be positive");
        }
        if !(self.horizon >= self.sim_step) || !self.horizon.is_finite() {
            return fail("horizon must cover at least one integration step");
        }
        if self.trace_length < 2 {
            return fail("trace_length must be at least 2");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return fail("noise_std must be non-negative");
        }
        if !self.r_low.is_finite() || !self.r_high.is_finite() {
            return fail("references must be finite");
        }
        Ok(())
    }

    pub fn step_height(&self) -> f64 {
        self.r_high - self.r_low
    }

    pub fn sample_spacing(&self) -> f64 {
        self.horizon / (self.trace_length - 1) as f64
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let h = self.sample_spacing();
        (0..self.trace_length).map(|j| j as f64 * h).collect()
    }
}

/// Retained samples of one step experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub reference: Vec<f64>,
    pub control: Vec<f64>,
    pub output: Vec<f64>,
    pub output_clean: Vec<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Discretized plant bound to a loop configuration; reused across many controllers.
#[derive(Debug, Clone)]
pub struct LoopSimulator {
    plant: DiscreteTransferFunction,
    dc_gain: f64,
    cfg: LoopConfig,
    steps: usize,
}

impl LoopSimulator {
    pub fn new(plant: &ContinuousTransferFunction, cfg: &LoopConfig) -> Result<Self> {
        cfg.validate()?;
        let discrete = discretize_zoh(plant, cfg.sim_step)?;
        let dc_gain = plant.dc_gain();
        if !dc_gain.is_finite() || dc_gain == 0.0 {
            return Err(Error::InvalidTransferFunction(format!(
                "loop initialization needs a finite non-zero DC gain, got {dc_gain}"
            )));
        }
        let steps = ((cfg.horizon / cfg.sim_step).round() as usize).max(1);
        Ok(Self { plant: discrete, dc_gain, cfg: cfg.clone(), steps })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.cfg
    }

    pub fn discrete(&self) -> &DiscreteTransferFunction {
        &self.plant
    }

    /// Noise-free run; `output == output_clean`.
    pub fn run_clean(&self, ctrl: ControllerParams) -> Trajectory {
        let (mut traj, _) = self.integrate(ctrl);
        traj.output = traj.output_clean.clone();
        traj
    }

    /// Noise-free output samples only, for identification inner loops.
    pub fn clean_output(&self, ctrl: ControllerParams) -> (Vec<f64>, bool) {
        let (traj, diverged) = self.integrate(ctrl);
        (traj.output_clean, diverged)
    }

    pub fn run<R: Rng + ?Sized>(&self, ctrl: ControllerParams, rng: &mut R) -> Trajectory {
        let (mut traj, _) = self.integrate(ctrl);
        if self.cfg.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.cfg.noise_std).expect("valid noise std");
            traj.output = traj.output_clean.iter().map(|y| y + normal.sample(rng)).collect();
        } else {
            traj.output = traj.output_clean.clone();
        }
        traj
    }

    fn integrate(&self, ctrl: ControllerParams) -> (Trajectory, bool) {
        let cfg = &self.cfg;
        let dt = cfg.sim_step;
        let p = &self.plant;
        let n = p.order();
        let r = cfg.r_high;
        let limit = 1e6 * cfg.r_high.abs().max(cfg.r_low.abs()).max(1.0);

        // steady state at r_low: integrator holds u1, plant state at its equilibrium for u1
        let u1 = cfg.r_low / self.dc_gain;
        let mut x = vec![0.0; n];
        if n > 0 {
            let m = DMatrix::identity(n, n) - &p.ad;
            if let Some(xs) = m.lu().solve(&(&p.bd * u1)) {
                x.copy_from_slice(xs.as_slice());
            }
        }
        let mut next = vec![0.0; n];
        let mut z = u1;
        let mut delay_line = std::collections::VecDeque::from(vec![u1; p.delay]);
        let fine = self.steps + 1;
        let mut ys = Vec::with_capacity(fine);
        let mut us = Vec::with_capacity(fine);
        let mut diverged = false;
        let gain = ctrl.kp * ctrl.ki * dt;

        for _ in 0..fine {
            let cx: f64 = p.c.iter().zip(&x).map(|(c, x)| c * x).sum();
            let (y, u, applied) = if p.delay == 0 {
                let y = if p.d != 0.0 {
                    (cx + p.d * (ctrl.kp * r + z)) / (1.0 + p.d * ctrl.kp)
                } else {
                    cx
                };
                let u = ctrl.kp * (r - y) + z;
                (y, u, u)
            } else {
                let applied = delay_line.pop_front().unwrap_or(u1);
                let y = cx + p.d * applied;
                let u = ctrl.kp * (r - y) + z;
                delay_line.push_back(u);
                (y, u, applied)
            };
            if !y.is_finite() || y.abs() > limit {
                diverged = true;
                break;
            }
            ys.push(y);
            us.push(u);
            z += gain * (r - y);
            advance(&p.ad, &p.bd, &x, applied, &mut next);
            std::mem::swap(&mut x, &mut next);
        }
        if diverged {
            let fill_y = ys.last().copied().unwrap_or(cfg.r_low).clamp(-limit, limit);
            let fill_u = us.last().copied().unwrap_or(u1);
            ys.resize(fine, fill_y);
            us.resize(fine, fill_u);
        }

        let times = cfg.sample_times();
        let sample = |signal: &[f64]| -> Vec<f64> {
            times.iter().map(|&t| interpolate(signal, t / dt)).collect()
        };
        let output_clean = sample(&ys);
        let control = sample(&us);
        let traj = Trajectory {
            reference: vec![r; times.len()],
            output: Vec::new(),
            control,
            output_clean,
            times,
            diverged,
        };
        (traj, diverged)
    }
}

fn interpolate(signal: &[f64], pos: f64) -> f64 {
    let last = signal.len() - 1;
    if pos <= 0.0 {
        return signal[0];
    }
    let k = pos.floor() as usize;
    if k >= last {
        return signal[last];
    }
    let frac = pos - k as f64;
    if frac < 1e-9 {
        signal[k]
    } else {
        signal[k] + frac * (signal[k + 1] - signal[k])
    }
}

/// Simulates the unit-feedback PI loop for a step from `r_low` to `r_high` at `t = 0`,
/// drawing measurement noise from a generator seeded with `cfg.rng_seed`.
pub fn simulate_closed_loop(
    plant: &ContinuousTransferFunction,
    ctrl: ControllerParams,
    cfg: &LoopConfig,
) -> Result<Trajectory> {
    let sim = LoopSimulator::new(plant, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    Ok(sim.run(ctrl, &mut rng))
}
