//! Latin hypercube designs on the unit cube.

use rand::seq::SliceRandom;
use rand::Rng;

/// `n` points in `[0, 1)^dims`; along every axis each stratum `[k/n, (k+1)/n)` holds
/// exactly one point.
pub fn latin_hypercube_unit<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        strata.shuffle(rng);
        for (p, &k) in points.iter_mut().zip(&strata) {
            p[d] = (k as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_point_per_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 7, 32] {
            let pts = latin_hypercube_unit(n, 3, &mut rng);
            for d in 0..3 {
                let mut seen = vec![false; n];
                for p in &pts {
                    let k = (p[d] * n as f64).floor() as usize;
                    assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }
    }
}
