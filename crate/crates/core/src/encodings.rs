//! Distance encodings (RBF, Fourier) and distance binning.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{init_linear, linear};
use crate::tensor::{BoundParams, ParamStore, Result, Tensor, TensorError};

/// Floor applied to `|sigma|` in the RBF kernels.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Uniform bins over `[0, d_max]`; distances at or past `d_max` land in the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub num_bins: usize,
    pub d_max: f64,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self { num_bins: 256, d_max: 8.0 }
    }
}

impl BinSpec {
    pub fn new(num_bins: usize, d_max: f64) -> std::result::Result<Self, String> {
        let spec = Self { num_bins, d_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.num_bins < 2 {
            return Err(format!("num_bins must be >= 2, got {}", self.num_bins));
        }
        if !(self.d_max > 0.0) {
            return Err(format!("d_max must be positive, got {}", self.d_max));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.d_max / self.num_bins as f64
    }

    pub fn bin(&self, d: f64) -> usize {
        let idx = (d.max(0.0) * self.num_bins as f64 / self.d_max).floor();
        (idx as usize).min(self.num_bins - 1)
    }

    pub fn center(&self, index: usize) -> f64 {
        (index as f64 + 0.5) * self.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceEncoding {
    Rbf,
    Fourier,
    None,
}

/// Index of the unordered type pair `(a, b)` in a `num_types^2` table.
pub fn pair_type(a: usize, b: usize, num_types: usize) -> usize {
    a.min(b) * num_types + a.max(b)
}

// ---------------------------------------------------------------- RBF

pub fn init_rbf(store: &mut ParamStore, name: &str, kernels: usize, pair_types: usize, out_dim: usize, d_max: f64, rng: &mut impl Rng) {
    let mu: Vec<f64> = (0..kernels).map(|k| d_max * k as f64 / (kernels.max(2) - 1) as f64).collect();
    store.insert(format!("{name}.mu"), &[kernels], mu);
    store.insert_const(format!("{name}.sigma"), &[kernels], (d_max / kernels as f64).max(0.1));
    store.insert_const(format!("{name}.mul"), &[pair_types, kernels], 1.0);
    store.insert_const(format!("{name}.add"), &[pair_types, kernels], 0.0);
    init_linear(store, &format!("{name}.mlp1"), kernels, out_dim, true, rng);
    init_linear(store, &format!("{name}.mlp2"), out_dim, out_dim, true, rng);
}

/// Gaussian kernel responses `[P, K]` for distances `d` (`[P]`) and pair types.
///
/// `o_k = exp(-0.5 ((m_k d + b_k - mu_k) / |sigma_k|)^2) / (sqrt(2 pi) |sigma_k|)`,
/// with `m`, `b` looked up per pair type and `|sigma|` floored at [`SIGMA_FLOOR`].
pub fn rbf_kernels(p: &BoundParams, name: &str, d: &Tensor, pair_types: &[usize]) -> Result<Tensor> {
    let count = d.numel();
    if pair_types.len() != count {
        return Err(TensorError::ShapeMismatch { op: "rbf", lhs: d.shape().to_vec(), rhs: vec![pair_types.len()] });
    }
    let mul = Tensor::embedding(p.get(&format!("{name}.mul"))?, pair_types)?;
    let add = Tensor::embedding(p.get(&format!("{name}.add"))?, pair_types)?;
    let mu = p.get(&format!("{name}.mu"))?;
    let sigma = p.get(&format!("{name}.sigma"))?.abs().clamp_min(SIGMA_FLOOR);
    let x = mul.mul(&d.reshape(&[count, 1])?)?.add(&add)?;
    let z = x.sub(mu)?.div(&sigma)?;
    let norm = sigma.scale((2.0 * PI).sqrt());
    z.square().scale(-0.5).exp().div(&norm)
}

/// RBF kernels followed by the two-layer MLP; output `[P, out_dim]`.
pub fn rbf_encode(p: &BoundParams, name: &str, d: &Tensor, pair_types: &[usize]) -> Result<Tensor> {
    let k = rbf_kernels(p, name, d, pair_types)?;
    let h = linear(p, &format!("{name}.mlp1"), &k)?.gelu();
    linear(p, &format!("{name}.mlp2"), &h)
}

// ---------------------------------------------------------------- Fourier

/// `count` wavelengths log-spaced between `2 delta_min` and `2 delta_max`.
pub fn fourier_wavelengths(count: usize, delta_min: f64, delta_max: f64) -> Vec<f64> {
    assert!(delta_min > 0.0 && delta_max > delta_min, "need 0 < delta_min < delta_max");
    let (lo, hi) = ((2.0 * delta_min).ln(), (2.0 * delta_max).ln());
    if count == 1 {
        return vec![lo.exp()];
    }
    (0..count).map(|k| (lo + (hi - lo) * k as f64 / (count - 1) as f64).exp()).collect()
}

/// `[sin(phi_k), cos(phi_k)]` per kernel with `phi_k = 2 pi d / lambda_k`; length `2K`.
pub fn fourier_features(d: f64, wavelengths: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * wavelengths.len());
    for &lambda in wavelengths {
        let phi = d * 2.0 * PI / lambda;
        out.push(phi.sin());
        out.push(phi.cos());
    }
    out
}

pub fn init_fourier(store: &mut ParamStore, name: &str, kernels: usize, out_dim: usize, rng: &mut impl Rng) {
    init_linear(store, &format!("{name}.proj"), 2 * kernels, out_dim, true, rng);
}

/// Fourier features for every distance followed by a linear layer; output `[P, out_dim]`.
pub fn fourier_encode(p: &BoundParams, name: &str, distances: &[f64], wavelengths: &[f64]) -> Result<Tensor> {
    let feats: Vec<f64> = distances.iter().flat_map(|&d| fourier_features(d, wavelengths)).collect();
    let x = Tensor::new(feats, &[distances.len(), 2 * wavelengths.len()])?;
    linear(p, &format!("{name}.proj"), &x)
}
