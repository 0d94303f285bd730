//! Neural building blocks of the TGT layer.

mod block;
mod egt;
mod triplet;

pub use block::{init_tgt_layer, tgt_layer, LayerDims};
pub use egt::{egt_attention, init_egt_attention, EgtOutput};
pub use triplet::{init_interaction, interaction, Interaction, InteractionOutput};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{init_linear, linear};
use crate::tensor::{BoundParams, ParamStore, Result, Tensor};

/// Dropout probabilities, each in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutSpec {
    pub source_p: f64,
    pub triplet_p: f64,
    pub path_p: f64,
    pub activation_p: f64,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        Self { source_p: 0.0, triplet_p: 0.0, path_p: 0.0, activation_p: 0.0 }
    }
}

impl DropoutSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, p) in [
            ("source_p", self.source_p),
            ("triplet_p", self.triplet_p),
            ("path_p", self.path_p),
            ("activation_p", self.activation_p),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        Ok(())
    }
}

/// Forward-pass mode. Both training and stochastic evaluation apply dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    StochasticEval,
    DeterministicEval,
}

/// Source of explicit dropout masks for one sample's forward pass.
///
/// Masks are drawn in call order from a seeded generator, so a forward pass
/// is reproducible from `(spec, mode, seed)`.
pub struct Dropout {
    pub spec: DropoutSpec,
    active: bool,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(spec: DropoutSpec, mode: Mode, rng: ChaCha8Rng) -> Self {
        Self { spec, active: mode != Mode::DeterministicEval, rng }
    }

    /// Dropout disabled regardless of the configured rates.
    pub fn off() -> Self {
        use rand::SeedableRng;
        Self { spec: DropoutSpec::none(), active: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Column mask for source dropout: `true` marks a hidden source node.
    ///
    /// Columns are dropped independently with `source_p`; if every column
    /// would be hidden the draw is repeated, so at least one always survives.
    pub fn source_mask(&mut self, n: usize) -> Option<Vec<bool>> {
        if !self.active || self.spec.source_p == 0.0 || n == 0 {
            return None;
        }
        source_dropout_mask(n, self.spec.source_p, &mut self.rng)
    }

    /// Inverted-scaling Bernoulli mask for triplet weights of the given shape.
    pub fn triplet_mask(&mut self, shape: &[usize]) -> Option<Tensor> {
        let p = self.spec.triplet_p;
        if !self.active || p == 0.0 {
            return None;
        }
        Some(bernoulli_mask(shape, p, &mut self.rng))
    }

    pub fn activation_mask(&mut self, shape: &[usize]) -> Option<Tensor> {
        let p = self.spec.activation_p;
        if !self.active || p == 0.0 {
            return None;
        }
        Some(bernoulli_mask(shape, p, &mut self.rng))
    }

    /// Per-sample residual-branch keep factor: `0` or `1 / (1 - p)`.
    pub fn path_factor(&mut self) -> Option<f64> {
        let p = self.spec.path_p;
        if !self.active || p == 0.0 {
            return None;
        }
        Some(if self.rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
    }
}

pub fn source_dropout_mask(n: usize, p: f64, rng: &mut impl Rng) -> Option<Vec<bool>> {
    if p == 0.0 || n == 0 {
        return None;
    }
    loop {
        let mask: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < p).collect();
        if mask.iter().any(|&m| !m) {
            return Some(mask);
        }
    }
}

/// Entries are `1 / (1 - p)` with probability `1 - p` and `0` otherwise.
pub fn bernoulli_mask(shape: &[usize], p: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let data = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    Tensor::new(data, shape).expect("mask data matches shape")
}

/// Scales a residual update by the path-dropout factor, if any.
pub fn path_drop(update: Tensor, factor: Option<f64>) -> Tensor {
    match factor {
        None => update,
        Some(f) => update.scale(f),
    }
}

pub fn init_ffn(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) {
    init_linear(store, &format!("{name}.fc1"), dim, hidden, true, rng);
    init_linear(store, &format!("{name}.fc2"), hidden, dim, true, rng);
}

/// Two-layer GELU feed-forward network over the last axis.
pub fn ffn(p: &BoundParams, name: &str, x: &Tensor, drop: &mut Dropout) -> Result<Tensor> {
    let mut hidden = linear(p, &format!("{name}.fc1"), x)?.gelu();
    if let Some(mask) = drop.activation_mask(hidden.shape()) {
        hidden = hidden.mul(&mask)?;
    }
    linear(p, &format!("{name}.fc2"), &hidden)
}
