//! Locally smoothed coordinate noise: nearby atoms receive correlated displacements.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Standard deviation of the per-atom Gaussian draws.
    pub sigma: f64,
    /// Smoothing length scale.
    pub nu: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.2, nu: 1.0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(format!("noise sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.nu > 0.0) {
            return Err(format!("noise nu must be > 0, got {}", self.nu));
        }
        Ok(())
    }
}

/// Displacements `sum_j exp(-|r_i - r_j| / nu) u_j` with `u_j ~ N(0, sigma^2 I)`.
///
/// The sum includes `j = i`. The draws depend only on the RNG and the atom
/// count, and the weights only on coordinate differences.
pub fn smooth_displacements(coords: &[Vec<f64>], cfg: &NoiseConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = coords.len();
    let dim = coords.first().map_or(0, Vec::len);
    let u: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| cfg.sigma * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let mut out = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let w = if i == j { 1.0 } else { (-euclidean(&coords[i], &coords[j]) / cfg.nu).exp() };
            for (o, uj) in out[i].iter_mut().zip(&u[j]) {
                *o += w * uj;
            }
        }
    }
    out
}

pub fn smooth_noise(coords: &[Vec<f64>], cfg: &NoiseConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let disp = smooth_displacements(coords, cfg, rng);
    coords.iter().zip(disp).map(|(r, d)| r.iter().zip(d).map(|(a, b)| a + b).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::pairwise_distances;
    use crate::seed::rng_for;

    fn cloud(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, &[]);
        (0..n).map(|_| (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = cloud(5, 1);
        assert_eq!(smooth_noise(&c, &NoiseConfig { sigma: 0.0, nu: 1.0 }, &mut rng_for(2, &[])), c);
    }

    #[test]
    fn single_atom_gets_plain_gaussian() {
        let c = vec![vec![1.0, 2.0, 3.0]];
        let cfg = NoiseConfig { sigma: 0.5, nu: 1.0 };
        let out = smooth_noise(&c, &cfg, &mut rng_for(3, &[]));
        let mut rng = rng_for(3, &[]);
        for k in 0..3 {
            let u: f64 = rng.sample(StandardNormal);
            assert_eq!(out[0][k], c[0][k] + 0.5 * u);
        }
    }

    #[test]
    fn huge_length_scale_is_rigid() {
        let c = cloud(6, 4);
        let cfg = NoiseConfig { sigma: 0.3, nu: 1e9 };
        let out = smooth_noise(&c, &cfg, &mut rng_for(5, &[]));
        let (a, b) = (pairwise_distances(&c), pairwise_distances(&out));
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6 * cfg.sigma, "{worst}");
    }

    #[test]
    fn config_validation() {
        assert!(NoiseConfig { sigma: -1.0, nu: 1.0 }.validate().is_err());
        assert!(NoiseConfig { sigma: 1.0, nu: 0.0 }.validate().is_err());
        assert!(NoiseConfig::default().validate().is_ok());
    }
}
