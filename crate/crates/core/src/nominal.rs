//! Analytic PI tuning from phase and gain margin specifications, used as the classical
//! baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{ControllerParams, LoopSimulator};
use crate::metrics::{clean_cost, CostWeights};

/// Margin specification on a first-order-plus-dead-time view of the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmSpec {
    /// Phase margin in radians.
    pub phase_margin: f64,
    /// Gain margin as a linear ratio.
    pub gain_margin: f64,
    /// Static gain of the first-order approximation. Carried for reference only: the
    /// proportional gain formula uses `high_freq_gain`.
    pub fopdt_gain: f64,
    pub fopdt_time_constant: f64,
    pub dead_time: f64,
    pub high_freq_gain: f64,
}

impl PgmSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.phase_margin > 0.0 && self.phase_margin <= std::f64::consts::FRAC_PI_2) {
            return fail("phase margin must lie in (0, pi/2]");
        }
        if !(self.gain_margin > 1.0) || !self.gain_margin.is_finite() {
            return fail("gain margin must exceed 1");
        }
        if !(self.fopdt_time_constant > 0.0) || !self.fopdt_time_constant.is_finite() {
            return fail("time constant must be positive");
        }
        if !(self.dead_time > 0.0) || !self.dead_time.is_finite() {
            return fail("dead time must be positive");
        }
        if !self.high_freq_gain.is_finite() || self.high_freq_gain == 0.0 || !self.fopdt_gain.is_finite() {
            return fail("plant gains must be finite and the high-frequency gain non-zero");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmTuning {
    pub params: ControllerParams,
    /// Approximate phase crossover frequency in rad/s.
    pub omega_p: f64,
    /// Set when the integral gain came out non-positive.
    pub nonpositive_ki: bool,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn phase_crossover(spec: &PgmSpec) -> f64 {
    let am = spec.gain_margin;
    (am * spec.phase_margin + 0.5 * std::f64::consts::PI * am * (am - 1.0)) / ((am * am - 1.0) * spec.dead_time)
}

pub fn pgm_tune(spec: &PgmSpec) -> Result<PgmTuning> {
    spec.validate()?;
    let wp = phase_crossover(spec);
    let tau = spec.fopdt_time_constant;
    let l = spec.dead_time;
    let kp = wp * tau / (spec.gain_margin * spec.high_freq_gain);
    let ki = 2.0 * wp - 4.0 * wp * wp * l / std::f64::consts::PI + 1.0 / tau;
    Ok(PgmTuning { params: ControllerParams::new(kp, ki), omega_p: wp, nonpositive_ki: !(ki > 0.0) })
}

/// Noise-free cost at `gains` divided by the ground-truth optimum cost.
pub fn nominal_baseline_cost(
    gains: ControllerParams,
    sim: &LoopSimulator,
    weights: &CostWeights,
    optimum_cost: f64,
) -> f64 {
    let (j, _) = clean_cost(sim, gains, weights);
    j / optimum_cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{ContinuousTransferFunction, LoopConfig};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit_spec() -> PgmSpec {
        PgmSpec {
            phase_margin: PI / 2.0,
            gain_margin: 2.0,
            fopdt_gain: 1.0,
            fopdt_time_constant: 1.0,
            dead_time: 1.0,
            high_freq_gain: 1.0,
        }
    }

    #[test]
    fn crossover_example() {
        let t = pgm_tune(&unit_spec()).unwrap();
        assert_relative_eq!(t.omega_p, 2.0 * PI / 3.0, epsilon = 1e-14);
        assert_relative_eq!(t.params.kp, PI / 3.0, epsilon = 1e-14);
        let wp = 2.0 * PI / 3.0;
        assert_relative_eq!(t.params.ki, 2.0 * wp - 4.0 * wp * wp / PI + 1.0, epsilon = 1e-14);
    }

    #[test]
    fn proportional_gain_inverse_in_high_freq_gain() {
        let a = pgm_tune(&unit_spec()).unwrap();
        let b = pgm_tune(&PgmSpec { high_freq_gain: 2.0, ..unit_spec() }).unwrap();
        assert_relative_eq!(b.params.kp, a.params.kp / 2.0, epsilon = 1e-15);
        assert_eq!(a.omega_p, b.omega_p);
        assert_eq!(a.params.ki, b.params.ki);
    }

    #[test]
    fn negative_integral_gain_is_flagged() {
        // 2 wp - 4 wp^2 / pi is about -1.39 for the unit specification
        let t = pgm_tune(&PgmSpec { fopdt_time_constant: 1.0, ..unit_spec() }).unwrap();
        assert!(t.nonpositive_ki);
        assert!(!pgm_tune(&PgmSpec { fopdt_time_constant: 0.5, ..unit_spec() }).unwrap().nonpositive_ki);
    }

    #[test]
    fn crossover_monotone_in_margin_and_delay() {
        let h = 1e-6;
        for am in [1.5, 2.0, 10.0, 199.5] {
            for pm in [0.2, 0.7, 1.2, 1.5] {
                for l in [0.002, 0.1, 1.0] {
                    let s = PgmSpec { gain_margin: am, phase_margin: pm, dead_time: l, ..unit_spec() };
                    let w = phase_crossover(&s);
                    assert!(phase_crossover(&PgmSpec { phase_margin: pm + h, ..s }) > w);
                    assert!(phase_crossover(&PgmSpec { dead_time: l + h * l, ..s }) < w);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(pgm_tune(&PgmSpec { gain_margin: 1.0, ..unit_spec() }).is_err());
        assert!(pgm_tune(&PgmSpec { phase_margin: 2.0, ..unit_spec() }).is_err());
        assert!(pgm_tune(&PgmSpec { dead_time: 0.0, ..unit_spec() }).is_err());
    }

    #[test]
    fn decibel_conversion() {
        assert_relative_eq!(db_to_linear(20.0), 10.0, epsilon = 1e-12);
        assert_relative_eq!(db_to_linear(46.0), 199.526_231_5, epsilon = 1e-6);
    }

    #[test]
    fn optimum_has_unit_ratio() {
        let sim = LoopSimulator::new(&ContinuousTransferFunction::reference_plant(), &LoopConfig::default()).unwrap();
        let w = CostWeights::default();
        let g = ControllerParams::new(0.54, 1.16);
        let (j, _) = clean_cost(&sim, g, &w);
        assert_eq!(nominal_baseline_cost(g, &sim, &w, j), 1.0);
    }

    /// Tries the plausible readings of the printed specification; informational only.
    #[test]
    fn printed_specification_readings() {
        let (l, a1, a2): (f64, f64, f64) = (9.544, 4.145, 4.199);
        let slow_pole = (a1 - (a1 * a1 - 4.0 * a2).sqrt()) / 2.0;
        let taus = [("1/slow pole", 1.0 / slow_pole), ("a1/a2", a1 / a2), ("1/sqrt(a2)", 1.0 / a2.sqrt())];
        let gains = [("L", l), ("L/a2", l / a2)];
        let margins = [("linear 46", 46.0), ("46 dB", db_to_linear(46.0))];
        for (pm_deg, want) in [(60.0, (0.85, 1.07)), (75.0, (0.86, 0.89))] {
            for (mn, am) in margins {
                for (tn, tau) in taus {
                    for (gn, k) in gains {
                        let spec = PgmSpec {
                            phase_margin: f64::to_radians(pm_deg),
                            gain_margin: am,
                            fopdt_gain: l / a2,
                            fopdt_time_constant: tau,
                            dead_time: 0.002,
                            high_freq_gain: k,
                        };
                        let t = pgm_tune(&spec).unwrap();
                        let hit = (t.params.kp - want.0).abs() <= 0.05 && (t.params.ki - want.1).abs() <= 0.05;
                        println!(
                            "pm={pm_deg} am={mn} tau={tn} gain={gn}: kp={:.4} ki={:.4} wp={:.2} match={hit}",
                            t.params.kp, t.params.ki, t.omega_p
                        );
                    }
                }
            }
        }
    }
}
