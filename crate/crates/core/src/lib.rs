//! Guided Bayesian optimization for data-efficient closed-loop controller tuning.
//!
//! The crate is organised bottom-up:
//!
//! * [`lti`] continuous transfer functions with dead time, zero-order-hold
//!   discretization and the unit-feedback PI loop simulator,
//! * [`metrics`] step-response indicators and the weighted scalar cost,
//! * [`gp`] Matérn 5/2 Gaussian process regression with marginal-likelihood fitting,
//! * [`acquisition`] expected improvement, grid argmax and the twin-session stop rule,
//! * [`twin`] the digital-twin dataset, output-error identification and fidelity scoring,
//! * [`tuner`] plain BO and guided BO drivers,
//! * [`nominal`] the analytic phase/gain-margin PI baseline.
//!
//! ```
//! use guided_bo::lti::{simulate_closed_loop, ContinuousTransferFunction, ControllerParams, LoopConfig};
//! use guided_bo::metrics::{aggregate_cost, CostWeights, StepMetrics};
//!
//! let plant = ContinuousTransferFunction::reference_plant();
//! let cfg = LoopConfig { noise_std: 0.0, ..LoopConfig::default() };
//! let traj = simulate_closed_loop(&plant, ControllerParams::new(0.54, 1.16), &cfg).unwrap();
//! let m = StepMetrics::from_trajectory(&traj, cfg.r_low, cfg.r_high);
//! let j = aggregate_cost(&m, &CostWeights::default());
//! assert!(j > 0.0);
//! ```

pub mod acquisition;
pub mod design;
pub mod error;
pub mod gp;
pub mod lti;
pub mod metrics;
pub mod nominal;
pub mod rng;
pub mod tuner;
pub mod twin;

pub use error::{Error, Result};
