//! Zero-mean Gaussian process regression with an ARD Matérn 5/2 kernel.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood over
//! `(ln sigma_f^2, ln l_1, ..., ln l_d)` with the observation noise variance held
//! fixed. The optimizer is a box-projected BFGS started from a Latin hypercube of
//! points in log space; the best local optimum wins.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::latin_hypercube_unit;
use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelHyperparams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let h = Self { signal_variance, lengthscales, noise_variance };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.signal_variance > 0.0
            && self.noise_variance > 0.0
            && !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.signal_variance.is_finite()
            && self.noise_variance.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("kernel hyperparameters must be positive: {self:?}")))
        }
    }

    /// `[ln sigma_f^2, ln l_1, ..., ln l_d]`
    pub fn log_params(&self) -> Vec<f64> {
        std::iter::once(self.signal_variance.ln()).chain(self.lengthscales.iter().map(|l| l.ln())).collect()
    }

    pub fn from_log_params(log: &[f64], noise_variance: f64) -> Self {
        Self {
            signal_variance: log[0].exp(),
            lengthscales: log[1..].iter().map(|v| v.exp()).collect(),
            noise_variance,
        }
    }

    fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Matérn 5/2 shape `(1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)`.
#[inline]
pub fn matern52_unit(r: f64) -> f64 {
    (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
}

pub fn matern52(a: &[f64], b: &[f64], h: &KernelHyperparams) -> f64 {
    h.signal_variance * matern52_unit(h.scaled_distance(a, b))
}

/// Signal covariance matrix `K_n` (no noise on the diagonal).
pub fn kernel_matrix(x: &[Vec<f64>], h: &KernelHyperparams) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = h.signal_variance;
        for j in 0..i {
            let v = matern52(&x[i], &x[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub n_starts: usize,
    /// Box in log space from which starting points are drawn.
    pub start_low: f64,
    pub start_high: f64,
    /// Optimization bounds for `ln sigma_f^2`.
    pub log_signal_bounds: (f64, f64),
    /// Optimization bounds for each `ln l_d`.
    pub log_lengthscale_bounds: (f64, f64),
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            start_low: -6.0,
            start_high: 6.0,
            log_signal_bounds: (-10.0, 16.0),
            log_lengthscale_bounds: (-7.0, 7.0),
            max_iters: 200,
            grad_tol: 1e-7,
            seed: 0,
        }
    }
}

/// Jitter multiples of `sigma_f^2` tried when the Cholesky factorization fails.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Conditioned Gaussian process.
#[derive(Debug, Clone)]
pub struct GpModel {
    train_inputs: Vec<Vec<f64>>,
    train_targets: Vec<f64>,
    hyperparams: KernelHyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Conditions the prior on `(x, y)` with fixed hyperparameters.
    pub fn condition(x: &[Vec<f64>], y: &[f64], hyperparams: KernelHyperparams) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyDataset("gaussian process needs at least one observation"));
        }
        if x.len() != y.len() {
            return Err(Error::InvalidConfig(format!("{} inputs vs {} targets", x.len(), y.len())));
        }
        if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training data"));
        }
        hyperparams.validate()?;
        let n = x.len();
        let mut k = kernel_matrix(x, &hyperparams);
        for i in 0..n {
            k[(i, i)] += hyperparams.noise_variance;
        }
        let mut jitter = 0.0;
        let chol = match Cholesky::new(k.clone()) {
            Some(c) => c,
            None => {
                let mut found = None;
                for rel in JITTER_LADDER {
                    jitter = rel * hyperparams.signal_variance;
                    let mut kj = k.clone();
                    for i in 0..n {
                        kj[(i, i)] += jitter;
                    }
                    if let Some(c) = Cholesky::new(kj) {
                        found = Some(c);
                        break;
                    }
                }
                found.ok_or(Error::NotPositiveDefinite { n, jitter })?
            }
        };
        let alpha = chol.solve(&DVector::from_column_slice(y));
        Ok(Self {
            train_inputs: x.to_vec(),
            train_targets: y.to_vec(),
            hyperparams,
            chol,
            alpha,
            jitter,
        })
    }

    /// Maximizes the log marginal likelihood and conditions on the data.
    pub fn fit(x: &[Vec<f64>], y: &[f64], noise_variance: f64, opts: &FitOptions) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyDataset("gaussian process needs at least one observation"));
        }
        let dims = x[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let starts = latin_hypercube_unit(opts.n_starts.max(1), dims + 1, &mut rng);
        let bounds = param_bounds(dims, opts);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for s in starts {
            let x0: Vec<f64> = s
                .iter()
                .zip(&bounds)
                .map(|(u, b)| (opts.start_low + u * (opts.start_high - opts.start_low)).clamp(b.0, b.1))
                .collect();
            let objective = |p: &[f64]| -> Option<(f64, Vec<f64>)> {
                let h = KernelHyperparams::from_log_params(p, noise_variance);
                let m = GpModel::condition(x, y, h).ok()?;
                let f = -m.log_marginal_likelihood();
                let g: Vec<f64> = m.lml_gradient().iter().map(|v| -v).collect();
                (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
            };
            if let Some((f, p)) = minimize_box_bfgs(objective, x0, &bounds, opts.max_iters, opts.grad_tol) {
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, p));
                }
            }
        }
        let (_, p) = best.ok_or(Error::NotPositiveDefinite { n: x.len(), jitter: JITTER_LADDER[4] })?;
        GpModel::condition(x, y, KernelHyperparams::from_log_params(&p, noise_variance))
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyperparams
    }

    pub fn train_inputs(&self) -> &[Vec<f64>] {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.train_targets
    }

    pub fn len(&self) -> usize {
        self.train_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_targets.is_empty()
    }

    /// Diagonal jitter that was needed on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor of `K_n + sigma^2 I (+ jitter)`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Posterior mean and variance of the latent cost at `x`.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let mut buf = vec![0.0; self.len()];
        self.posterior_with(x, &mut buf)
    }

    /// As [`posterior`](Self::posterior), reusing `buf` (length `n`) for the
    /// cross-covariance vector.
    pub fn posterior_with(&self, x: &[f64], buf: &mut [f64]) -> (f64, f64) {
        let h = &self.hyperparams;
        let mut mean = 0.0;
        for (i, (xi, a)) in self.train_inputs.iter().zip(self.alpha.iter()).enumerate() {
            let k = matern52(x, xi, h);
            buf[i] = k;
            mean += k * a;
        }
        // forward substitution L v = k
        let l = self.chol.l_dirty();
        let n = buf.len();
        let mut quad = 0.0;
        for i in 0..n {
            let mut s = buf[i];
            for j in 0..i {
                s -= l[(i, j)] * buf[j];
            }
            let v = s / l[(i, i)];
            buf[i] = v;
            quad += v * v;
        }
        (mean, (h.signal_variance - quad).max(0.0))
    }

    /// `ln N(y; 0, K_n + sigma^2 I)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let y = DVector::from_column_slice(&self.train_targets);
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * y.dot(&self.alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Gradient of the log marginal likelihood with respect to
    /// `[ln sigma_f^2, ln l_1, ..., ln l_d]`.
    pub fn lml_gradient(&self) -> Vec<f64> {
        let h = &self.hyperparams;
        let n = self.len();
        let dims = h.lengthscales.len();
        let kinv = self.chol.inverse();
        // W = alpha alpha^T - K^-1; dL/dp = 0.5 tr(W dK/dp)
        let mut grad = vec![0.0; dims + 1];
        // dK/dp is symmetric: off-diagonal pairs counted twice
        for i in 0..n {
            let xi = &self.train_inputs[i];
            grad[0] += (self.alpha[i] * self.alpha[i] - kinv[(i, i)]) * h.signal_variance;
            for j in 0..i {
                let w = 2.0 * (self.alpha[i] * self.alpha[j] - kinv[(i, j)]);
                let xj = &self.train_inputs[j];
                let r = h.scaled_distance(xi, xj);
                let e = (-SQRT5 * r).exp();
                grad[0] += w * h.signal_variance * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * e;
                let common = h.signal_variance * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e;
                for d in 0..dims {
                    let s = (xi[d] - xj[d]) / h.lengthscales[d];
                    grad[d + 1] += w * common * s * s;
                }
            }
        }
        grad.iter_mut().for_each(|g| *g *= 0.5);
        grad
    }
}

fn param_bounds(dims: usize, opts: &FitOptions) -> Vec<(f64, f64)> {
    std::iter::once(opts.log_signal_bounds)
        .chain(std::iter::repeat_n(opts.log_lengthscale_bounds, dims))
        .collect()
}

/// Minimizes `f` over a box with BFGS steps projected onto the bounds.
/// Returns the final value and point, or `None` if `f` is undefined at `x0`.
fn minimize_box_bfgs<F>(f: F, x0: Vec<f64>, bounds: &[(f64, f64)], max_iters: usize, tol: f64) -> Option<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for (v, b) in x.iter_mut().zip(bounds) {
            *v = v.clamp(b.0, b.1);
        }
    };
    let projected_grad_norm = |x: &[f64], g: &[f64]| -> f64 {
        x.iter()
            .zip(g)
            .zip(bounds)
            .map(|((x, g), b)| {
                let blocked = (*x <= b.0 && *g > 0.0) || (*x >= b.1 && *g < 0.0);
                if blocked { 0.0 } else { g * g }
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut x = x0;
    project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    const MAX_STEP: f64 = 2.0;

    for _ in 0..max_iters {
        if projected_grad_norm(&x, &g) < tol {
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut d = -(&hinv * &gv);
        if d.dot(&gv) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            d = -gv.clone();
        }
        let norm = d.norm();
        if norm > MAX_STEP {
            d *= MAX_STEP / norm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut xn: Vec<f64> = x.iter().zip(d.iter()).map(|(x, d)| x + step * d).collect();
            project(&mut xn);
            let dx: f64 = xn.iter().zip(&x).zip(&g).map(|((a, b), g)| (a - b) * g).sum();
            if let Some((fn_, gn)) = f(&xn) {
                if fn_ <= fx + 1e-4 * dx && dx <= 0.0 {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        if improvement.abs() < 1e-14 * (1.0 + fx.abs()) && s.norm() < 1e-12 {
            break;
        }
    }
    Some((fx, x))
}
