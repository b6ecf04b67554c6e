//! Step-response performance indicators and the weighted cost `J(theta)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{ContinuousTransferFunction, ControllerParams, FeasibleSet, LoopConfig, LoopSimulator, Trajectory};

/// Relative half-width of the settling band.
pub const SETTLING_BAND: f64 = 0.02;
pub const RISE_LOW: f64 = 0.10;
pub const RISE_HIGH: f64 = 0.60;
/// Overshoot reported for a diverged trajectory, in percent.
pub const DIVERGED_OVERSHOOT: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub overshoot_pct: f64,
    pub settling_time: f64,
    pub rise_time: f64,
    pub itae: f64,
    pub diverged: bool,
}

impl StepMetrics {
    pub fn new(overshoot_pct: f64, settling_time: f64, rise_time: f64, itae: f64) -> Self {
        Self { overshoot_pct, settling_time, rise_time, itae, diverged: false }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.overshoot_pct, self.settling_time, self.rise_time, self.itae]
    }

    /// Saturated indicators of a response that left the admissible range.
    pub fn saturated(horizon: f64, step_height: f64) -> Self {
        Self {
            overshoot_pct: DIVERGED_OVERSHOOT,
            settling_time: horizon,
            rise_time: horizon,
            itae: horizon * horizon * step_height.abs(),
            diverged: true,
        }
    }

    /// All four indicators on the measured (noisy) output channel.
    pub fn from_trajectory(traj: &Trajectory, r_low: f64, r_high: f64) -> Self {
        if traj.diverged {
            return Self::saturated(traj.horizon(), r_high - r_low);
        }
        Self {
            overshoot_pct: overshoot_pct(traj, r_low, r_high),
            settling_time: settling_time(traj, r_low, r_high),
            rise_time: rise_time(traj, r_low, r_high),
            itae: itae(traj, r_high),
            diverged: false,
        }
    }
}

/// `100 * max(0, (y_max - y(T)) / dr)`.
pub fn overshoot_pct(traj: &Trajectory, r_low: f64, r_high: f64) -> f64 {
    if traj.diverged {
        return DIVERGED_OVERSHOOT;
    }
    let y = &traj.output;
    let Some(&y_end) = y.last() else { return 0.0 };
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    100.0 * ((y_max - y_end) / (r_high - r_low)).max(0.0)
}

/// First sample time after which every sample stays within 2 % of the step height
/// around `r_high`; the horizon if the last sample is still outside the band.
pub fn settling_time(traj: &Trajectory, r_low: f64, r_high: f64) -> f64 {
    let horizon = traj.horizon();
    if traj.diverged || traj.is_empty() {
        return horizon;
    }
    let band = SETTLING_BAND * (r_high - r_low).abs();
    match traj.output.iter().rposition(|y| (y - r_high).abs() > band) {
        None => traj.times[0],
        Some(k) if k + 1 == traj.len() => horizon,
        Some(k) => traj.times[k + 1],
    }
}

/// Linearly interpolated time of the first upward crossing of `r_low + fraction * dr`.
pub fn crossing_time(times: &[f64], y: &[f64], level: f64) -> Option<f64> {
    let k = y.iter().position(|&v| v >= level)?;
    if k == 0 {
        return Some(times[0]);
    }
    let (y0, y1) = (y[k - 1], y[k]);
    let frac = (level - y0) / (y1 - y0);
    Some(times[k - 1] + frac * (times[k] - times[k - 1]))
}

/// Time to go from 10 % to 60 % of the way from `r_low` to `r_high`.
pub fn rise_time(traj: &Trajectory, r_low: f64, r_high: f64) -> f64 {
    let horizon = traj.horizon();
    if traj.diverged || traj.is_empty() {
        return horizon;
    }
    let dr = r_high - r_low;
    let lo = crossing_time(&traj.times, &traj.output, r_low + RISE_LOW * dr);
    let hi = crossing_time(&traj.times, &traj.output, r_low + RISE_HIGH * dr);
    match (lo, hi) {
        (Some(a), Some(b)) => (b - a).max(0.0),
        _ => horizon,
    }
}

/// Trapezoidal `int_0^T t |y(t) - r_high| dt` over the retained samples.
pub fn itae(traj: &Trajectory, r_high: f64) -> f64 {
    let f: Vec<f64> = traj.times.iter().zip(&traj.output).map(|(t, y)| t * (y - r_high).abs()).collect();
    traj.times
        .windows(2)
        .zip(f.windows(2))
        .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
        .sum()
}

/// Positive weights summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

/// Overshoot, settling, rise, ITAE weights as published; they sum to 0.99 and get renormalized.
pub const PUBLISHED_WEIGHTS: [f64; 4] = [0.44, 0.22, 0.22, 0.11];

impl Default for CostWeights {
    fn default() -> Self {
        Self::normalized(PUBLISHED_WEIGHTS).expect("published weights are positive")
    }
}

impl CostWeights {
    /// Rescales positive raw weights so they sum to one.
    pub fn normalized(raw: [f64; 4]) -> Result<Self> {
        if raw.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(format!("cost weights must be positive, got {raw:?}")));
        }
        let s: f64 = raw.iter().sum();
        Ok(Self { w1: raw[0] / s, w2: raw[1] / s, w3: raw[2] / s, w4: raw[3] / s })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w1, self.w2, self.w3, self.w4]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|w| !(*w > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("cost weights must be positive and sum to 1, got {w:?}")));
        }
        Ok(())
    }
}

/// `J = w1 * overshoot + w2 * Ts + w3 * Tr + w4 * ITAE`.
pub fn aggregate_cost(m: &StepMetrics, w: &CostWeights) -> f64 {
    m.as_array().iter().zip(w.as_array()).map(|(m, w)| m * w).sum()
}

/// Noise-free cost of a controller on a prepared loop.
pub fn clean_cost(sim: &LoopSimulator, ctrl: ControllerParams, w: &CostWeights) -> (f64, StepMetrics) {
    let cfg = sim.config();
    let traj = sim.run_clean(ctrl);
    let m = StepMetrics::from_trajectory(&traj, cfg.r_low, cfg.r_high);
    (aggregate_cost(&m, w), m)
}

/// Inverse-mean normalization: `w_i ∝ importance_i / mean_i`.
pub fn weights_from_means(means: [f64; 4], importance: [f64; 4]) -> Result<CostWeights> {
    let mut raw = [0.0; 4];
    for i in 0..4 {
        raw[i] = importance[i] / means[i].abs().max(f64::EPSILON);
    }
    CostWeights::normalized(raw)
}

/// `n_probes` gains evenly spaced along the diagonal of the feasible box.
pub fn probe_gains(feasible: &FeasibleSet, n_probes: usize) -> Vec<ControllerParams> {
    (0..n_probes)
        .map(|k| {
            let s = k as f64 / (n_probes - 1) as f64;
            feasible.denormalize([s, s])
        })
        .collect()
}

/// Mean of each indicator over the probe gains, noise-free.
pub fn probe_means(
    plant: &ContinuousTransferFunction,
    feasible: &FeasibleSet,
    n_probes: usize,
    cfg: &LoopConfig,
) -> Result<[f64; 4]> {
    if n_probes < 2 {
        return Err(Error::InvalidConfig("calibration needs at least two probes".into()));
    }
    let sim = LoopSimulator::new(plant, cfg)?;
    let mut sums = [0.0; 4];
    for g in probe_gains(feasible, n_probes) {
        let traj = sim.run_clean(g);
        let m = StepMetrics::from_trajectory(&traj, cfg.r_low, cfg.r_high).as_array();
        for i in 0..4 {
            sums[i] += m[i];
        }
    }
    Ok(sums.map(|s| s / n_probes as f64))
}

/// Measures the indicators at evenly spread probe gains and turns their means into
/// normalizing weights scaled by `importance`.
pub fn calibrate_weights(
    plant: &ContinuousTransferFunction,
    feasible: &FeasibleSet,
    n_probes: usize,
    importance: [f64; 4],
    cfg: &LoopConfig,
) -> Result<CostWeights> {
    let means = probe_means(plant, feasible, n_probes, cfg)?;
    weights_from_means(means, importance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn traj_from(times: Vec<f64>, y: Vec<f64>) -> Trajectory {
        let n = times.len();
        Trajectory {
            times,
            reference: vec![0.0; n],
            control: vec![0.0; n],
            output_clean: y.clone(),
            output: y,
            diverged: false,
        }
    }

    fn grid(n: usize, horizon: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * horizon / (n - 1) as f64).collect()
    }

    fn first_order(tau: f64, r1: f64, r2: f64, n: usize, horizon: f64) -> Trajectory {
        let t = grid(n, horizon);
        let y = t.iter().map(|t| r1 + (r2 - r1) * (1.0 - (-t / tau).exp())).collect();
        traj_from(t, y)
    }

    #[test]
    fn ideal_step_has_zero_metrics() {
        let t = grid(100, 5.0);
        let traj = traj_from(t, vec![306.0; 100]);
        assert_eq!(overshoot_pct(&traj, 245.0, 306.0), 0.0);
        assert_eq!(settling_time(&traj, 245.0, 306.0), 0.0);
        assert_eq!(rise_time(&traj, 245.0, 306.0), 0.0);
        assert_eq!(itae(&traj, 306.0), 0.0);
    }

    #[test]
    fn overshoot_arithmetic() {
        let t = grid(3, 1.0);
        let traj = traj_from(t.clone(), vec![245.0, 312.1, 306.0]);
        assert_relative_eq!(overshoot_pct(&traj, 245.0, 306.0), 10.0, max_relative = 1e-12);
        // creeping response: y_max = y(T)
        let traj = traj_from(t, vec![245.0, 280.0, 300.0]);
        assert_eq!(overshoot_pct(&traj, 245.0, 306.0), 0.0);
    }

    #[test]
    fn first_order_settling_and_rise() {
        let tau = 0.5;
        let horizon = 5.0;
        let traj = first_order(tau, 245.0, 306.0, 100, horizon);
        let h = horizon / 99.0;
        let ts = settling_time(&traj, 245.0, 306.0);
        assert!((ts - tau * 50f64.ln()).abs() <= h, "ts = {ts}");
        // interpolation error on an exponential is second order in the spacing
        let tr = rise_time(&traj, 245.0, 306.0);
        assert!((tr - tau * 2.25f64.ln()).abs() < 0.01, "tr = {tr}");
    }

    #[test]
    fn fallbacks_to_horizon() {
        let traj = first_order(50.0, 0.0, 1.0, 100, 5.0);
        assert_eq!(settling_time(&traj, 0.0, 1.0), 5.0);
        assert_eq!(rise_time(&traj, 0.0, 1.0), 5.0);
    }

    #[test]
    fn itae_quadrature() {
        let horizon = 5.0;
        let e = 2.0;
        let t = grid(100, horizon);
        let traj = traj_from(t.clone(), vec![306.0 + e; 100]);
        assert_relative_eq!(itae(&traj, 306.0), e * horizon * horizon / 2.0, max_relative = 1e-12);
        let t = grid(2001, horizon);
        let y = t.iter().map(|t| 306.0 + (1.0 - t / horizon) * e).collect();
        let traj = traj_from(t, y);
        let exact = e * horizon * horizon / 6.0;
        assert!((itae(&traj, 306.0) - exact).abs() < 1e-6 * e * horizon * horizon);
    }

    #[test]
    fn diverged_trajectory_saturates() {
        let mut traj = first_order(0.5, 245.0, 306.0, 100, 5.0);
        traj.diverged = true;
        let m = StepMetrics::from_trajectory(&traj, 245.0, 306.0);
        assert!(m.diverged);
        assert_eq!(m.overshoot_pct, DIVERGED_OVERSHOOT);
        assert_eq!(m.settling_time, 5.0);
        assert_eq!(m.rise_time, 5.0);
        assert_eq!(m.itae, 25.0 * 61.0);
    }

    #[test]
    fn cost_aggregation() {
        let w = CostWeights::default();
        assert_eq!(aggregate_cost(&StepMetrics::new(0.0, 0.0, 0.0, 0.0), &w), 0.0);
        let ones = aggregate_cost(&StepMetrics::new(1.0, 1.0, 1.0, 1.0), &w);
        assert_relative_eq!(ones, 1.0, epsilon = 1e-12);
        assert_relative_eq!(ones * 0.99, 0.99, epsilon = 1e-12);
        let m = StepMetrics::new(10.0, 2.0, 1.0, 0.5);
        let direct = (0.44 * 10.0 + 0.22 * 2.0 + 0.22 * 1.0 + 0.11 * 0.5) / 0.99;
        assert_relative_eq!(aggregate_cost(&m, &w), direct, max_relative = 1e-12);
        w.validate().unwrap();
        assert!(CostWeights::normalized([0.5, 0.5, 0.0, 0.1]).is_err());
    }

    #[test]
    fn inverse_mean_weights() {
        let w = weights_from_means([3.0; 4], [1.0; 4]).unwrap();
        for v in w.as_array() {
            assert_relative_eq!(v, 0.25, epsilon = 1e-15);
        }
        let w = weights_from_means([2.0, 1.0, 1.0, 1.0], [1.0; 4]).unwrap();
        let expect = [1.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0];
        for (a, b) in w.as_array().iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        // zero mean is guarded, not a division by zero
        let w = weights_from_means([0.0, 1.0, 1.0, 1.0], [1.0; 4]).unwrap();
        assert!(w.w1 > 0.99);
    }

    #[test]
    fn calibration_needs_two_probes() {
        let plant = ContinuousTransferFunction::reference_plant();
        let r = calibrate_weights(&plant, &FeasibleSet::default(), 1, [1.0; 4], &LoopConfig::default());
        assert!(r.is_err());
    }

    /// Noise-free inverse-mean calibration on the reference plant, five diagonal
    /// probes, published weights as importance. Frozen from an independent
    /// numpy/scipy re-implementation of the loop and the indicators.
    #[test]
    fn calibration_on_reference_plant() {
        let plant = ContinuousTransferFunction::reference_plant();
        let cfg = LoopConfig { noise_std: 0.0, ..LoopConfig::default() };
        let means = probe_means(&plant, &FeasibleSet::default(), 5, &cfg).unwrap();
        let frozen = [14.0388, 3.5658, 1.04342, 103.494];
        for (m, f) in means.iter().zip(frozen) {
            assert_relative_eq!(*m, f, max_relative = 2e-3);
        }
    }

    /// With the published weights as importance multipliers the calibrated weights
    /// are dominated by the rise-time term, far from the published profile.
    #[test]
    #[ignore = "published weights are not reproducible by inverse-mean calibration on this plant"]
    fn calibration_reproduces_published_weights() {
        let plant = ContinuousTransferFunction::reference_plant();
        let cfg = LoopConfig { noise_std: 0.0, ..LoopConfig::default() };
        let w = calibrate_weights(&plant, &FeasibleSet::default(), 5, PUBLISHED_WEIGHTS, &cfg).unwrap();
        for (a, b) in w.as_array().iter().zip(CostWeights::default().as_array()) {
            assert!((a - b).abs() <= 0.1, "{:?}", w);
        }
    }

    /// Underdamped second-order step response sampled densely.
    fn second_order(zeta: f64, wn: f64, dt: f64, horizon: f64) -> Trajectory {
        let n = (horizon / dt).round() as usize + 1;
        let t = grid(n, horizon);
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let phi = zeta.acos();
        let y = t
            .iter()
            .map(|t| 1.0 - (-zeta * wn * t).exp() / (1.0 - zeta * zeta).sqrt() * (wd * t + phi).sin())
            .collect();
        traj_from(t, y)
    }

    #[test]
    fn second_order_overshoot_matches_formula() {
        let traj = second_order(0.5, 2.0, 1e-4, 12.0);
        let expected = 100.0 * (-std::f64::consts::PI * 0.5 / 0.75f64.sqrt()).exp();
        assert_relative_eq!(expected, 16.303, epsilon = 1e-3);
        let got = overshoot_pct(&traj, 0.0, 1.0);
        assert!((got - expected).abs() / expected < 0.01, "{got}");
    }

    proptest! {
        #[test]
        fn translation_invariance(offset in -500.0..500.0f64, tau in 0.1..1.5f64) {
            let a = first_order(tau, 0.0, 61.0, 100, 5.0);
            let mut b = a.clone();
            for y in b.output.iter_mut() { *y += offset; }
            let ma = StepMetrics::from_trajectory(&a, 0.0, 61.0);
            let mb = StepMetrics::from_trajectory(&b, offset, 61.0 + offset);
            for (x, y) in ma.as_array().iter().zip(mb.as_array()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn scaling_invariance(scale in 0.01..100.0f64, tau in 0.1..1.5f64) {
            let t = grid(100, 5.0);
            let y: Vec<f64> = t.iter().map(|t| 1.0 - (-t / tau).exp() * (3.0 * t).cos()).collect();
            let a = traj_from(t.clone(), y.clone());
            let b = traj_from(t, y.iter().map(|v| v * scale).collect());
            let ma = StepMetrics::from_trajectory(&a, 0.0, 1.0);
            let mb = StepMetrics::from_trajectory(&b, 0.0, scale);
            prop_assert!((ma.overshoot_pct - mb.overshoot_pct).abs() <= 1e-9 * (1.0 + ma.overshoot_pct));
            prop_assert!((ma.settling_time - mb.settling_time).abs() <= 1e-9);
            prop_assert!((ma.rise_time - mb.rise_time).abs() <= 1e-9);
            prop_assert!((ma.itae * scale - mb.itae).abs() <= 1e-9 * (1.0 + mb.itae));
        }

        #[test]
        fn cost_is_monotone_and_linear(m in prop::array::uniform4(0.0..100.0f64), i in 0usize..4, d in 0.0..10.0f64) {
            let w = CostWeights::default();
            let base = StepMetrics::new(m[0], m[1], m[2], m[3]);
            let mut bumped = m;
            bumped[i] += d;
            let up = StepMetrics::new(bumped[0], bumped[1], bumped[2], bumped[3]);
            let delta = aggregate_cost(&up, &w) - aggregate_cost(&base, &w);
            prop_assert!(delta >= -1e-12);
            prop_assert!((delta - w.as_array()[i] * d).abs() <= 1e-9);
        }
    }
}
