//! Expected improvement for cost minimization, exhaustive grid maximization and the
//! EI-ratio rule that ends a twin session.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::gp::GpModel;
use crate::lti::{ControllerParams, FeasibleSet};

/// Below this posterior variance the improvement is taken as zero.
pub const MIN_VARIANCE: f64 = 1e-12;

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[max(0, j_best - Y)]` for `Y ~ N(mean, variance)`.
pub fn expected_improvement(mean: f64, variance: f64, j_best: f64) -> f64 {
    if !(variance >= MIN_VARIANCE) {
        return 0.0;
    }
    let sd = variance.sqrt();
    let z = (j_best - mean) / sd;
    (sd * (z * std_normal_cdf(z) + std_normal_pdf(z))).max(0.0)
}

/// Lattice over the feasible set, endpoints included, `kp` varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionGrid {
    resolution: [usize; 2],
    points: Vec<ControllerParams>,
    normalized: Vec<Vec<f64>>,
}

impl AcquisitionGrid {
    pub fn new(feasible: &FeasibleSet, kp_resolution: usize, ki_resolution: usize) -> Self {
        assert!(kp_resolution >= 2 && ki_resolution >= 2, "grid resolution must be at least 2");
        let mut points = Vec::with_capacity(kp_resolution * ki_resolution);
        let mut normalized = Vec::with_capacity(kp_resolution * ki_resolution);
        for i in 0..kp_resolution {
            let u = i as f64 / (kp_resolution - 1) as f64;
            for j in 0..ki_resolution {
                let v = j as f64 / (ki_resolution - 1) as f64;
                points.push(feasible.denormalize([u, v]));
                normalized.push(vec![u, v]);
            }
        }
        Self { resolution: [kp_resolution, ki_resolution], points, normalized }
    }

    pub fn square(feasible: &FeasibleSet, resolution: usize) -> Self {
        Self::new(feasible, resolution, resolution)
    }

    pub fn resolution(&self) -> [usize; 2] {
        self.resolution
    }

    pub fn points(&self) -> &[ControllerParams] {
        &self.points
    }

    /// Grid points mapped to the unit square.
    pub fn normalized(&self) -> &[Vec<f64>] {
        &self.normalized
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub theta: ControllerParams,
    pub index: usize,
    pub ei: f64,
    /// Posterior standard deviation at `theta`.
    pub std: f64,
}

/// Grid point of maximal expected improvement; the first one wins ties.
pub fn next_query(model: &GpModel, grid: &AcquisitionGrid, j_best: f64) -> Query {
    let mut buf = vec![0.0; model.len()];
    let mut best = (0usize, f64::NEG_INFINITY, 0.0);
    for (idx, x) in grid.normalized().iter().enumerate() {
        let (mean, var) = model.posterior_with(x, &mut buf);
        let ei = expected_improvement(mean, var, j_best);
        if ei > best.1 {
            best = (idx, ei, var);
        }
    }
    Query { theta: grid.points()[best.0], index: best.0, ei: best.1, std: best.2.sqrt() }
}

/// Expected-improvement values of the queries accepted during one twin session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EiHistory {
    pub values: Vec<f64>,
}

impl EiHistory {
    pub fn push(&mut self, ei: f64) {
        self.values.push(ei.max(0.0));
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether value `t` is at most `eta3` times the largest of the up to `window`
    /// values before it. The first value has no predecessor and never qualifies.
    fn small_relative_to_window(&self, t: usize, eta3: f64, window: usize) -> bool {
        if t == 0 {
            return false;
        }
        let start = t.saturating_sub(window);
        let max = self.values[start..t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.values[t] <= eta3 * max
    }
}

/// Twin-session stop rule: the ratio condition held on each of the last `n_ei`
/// twin iterations, or the iteration counter `i` exceeded `n_max`.
pub fn twin_should_stop(history: &EiHistory, eta3: f64, n_ei: usize, i: usize, n_max: usize) -> bool {
    if i > n_max {
        return true;
    }
    let n = history.len();
    if n_ei == 0 || n < n_ei + 1 {
        return false;
    }
    (n - n_ei..n).all(|t| history.small_relative_to_window(t, eta3, n_ei))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelHyperparams;
    use approx::assert_relative_eq;

    #[test]
    fn ei_reference_values() {
        assert_eq!(expected_improvement(1.0, 0.0, 2.0), 0.0);
        assert_relative_eq!(expected_improvement(3.0, 1.0, 3.0), 0.398_942_280_4, epsilon = 1e-10);
        assert!(expected_improvement(13.0, 1.0, 3.0) < 1e-20);
        // deterministic improvement for tiny variance is not reported
        assert_eq!(expected_improvement(1.0, 1e-13, 2.0), 0.0);
        // deep in the money EI tends to j_best - mean
        assert_relative_eq!(expected_improvement(0.0, 1e-4, 5.0), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn ei_grows_with_variance_at_incumbent() {
        let mut prev = 0.0;
        for k in 1..50 {
            let v = k as f64 * 0.3;
            let ei = expected_improvement(2.0, v, 2.0);
            assert!(ei > prev);
            prev = ei;
        }
    }

    #[test]
    fn grid_contains_corners_in_lexicographic_order() {
        let fs = FeasibleSet::default();
        let g = AcquisitionGrid::new(&fs, 3, 4);
        assert_eq!(g.len(), 12);
        assert_eq!(g.points()[0], ControllerParams::new(0.11, 0.87));
        assert_eq!(g.points()[3], ControllerParams::new(0.11, 2.08));
        assert_relative_eq!(g.points()[4].kp, 0.605, epsilon = 1e-12);
        assert_eq!(g.points()[11], ControllerParams::new(1.10, 2.08));
        assert!(g.points().iter().all(|p| fs.contains(*p)));
    }

    #[test]
    fn constant_posterior_picks_first_point() {
        // data far outside the unit square leave the posterior flat over the grid
        let h = KernelHyperparams::new(1.0, vec![0.01, 0.01], 1e-3).unwrap();
        let m = GpModel::condition(&[vec![50.0, 50.0]], &[1.0], h).unwrap();
        let g = AcquisitionGrid::square(&FeasibleSet::default(), 5);
        let q = next_query(&m, &g, 1.0);
        assert_eq!(q.index, 0);
    }

    #[test]
    fn high_cost_corner_pushes_query_away() {
        let h = KernelHyperparams::new(4.0, vec![0.3, 0.3], 1e-3).unwrap();
        let m = GpModel::condition(&[vec![0.0, 0.0]], &[10.0], h).unwrap();
        let g = AcquisitionGrid::square(&FeasibleSet::default(), 11);
        let q = next_query(&m, &g, 10.0);
        let n = g.normalized()[q.index].clone();
        assert!(n[0] + n[1] > 1.0, "{n:?}");
        // brute-force scan
        let scan: Vec<f64> = g
            .normalized()
            .iter()
            .map(|x| {
                let (mu, v) = m.posterior(x);
                expected_improvement(mu, v, 10.0)
            })
            .collect();
        let max = scan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(scan.iter().position(|v| *v == max).unwrap(), q.index);
        assert_relative_eq!(q.std, m.posterior(&n).1.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn stop_rule_traces() {
        let h = |v: &[f64]| EiHistory { values: v.to_vec() };
        // iteration budget
        assert!(twin_should_stop(&h(&[]), 0.2, 3, 36, 35));
        assert!(twin_should_stop(&h(&[5.0, 6.0, 7.0]), 0.2, 3, 36, 35));
        // rolling-max rule
        let seq = [1.0, 0.1, 0.05, 0.01];
        for n in 1..=3 {
            assert!(!twin_should_stop(&h(&seq[..n]), 0.2, 3, n, 35), "stopped after {n}");
        }
        assert!(twin_should_stop(&h(&seq), 0.2, 3, 4, 35));
        // strictly increasing never satisfies the ratio condition
        let inc: Vec<f64> = (1..30).map(|k| k as f64).collect();
        for n in 1..inc.len() {
            assert!(!twin_should_stop(&h(&inc[..n]), 0.2, 3, n, 35));
        }
        // a non-satisfying value breaks the run
        assert!(!twin_should_stop(&h(&[1.0, 0.1, 0.9, 0.01]), 0.2, 3, 4, 35));
    }

    #[test]
    fn stop_latches_in_iteration_counter() {
        let hist = EiHistory { values: vec![1.0, 0.1, 0.05, 0.01] };
        for i in 4..100 {
            assert!(twin_should_stop(&hist, 0.2, 3, i, 35));
        }
    }
}
