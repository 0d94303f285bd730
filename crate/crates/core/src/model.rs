//! The full network: input embeddings, a stack of TGT layers with optional
//! parameter sharing, and the task heads.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encodings::{fourier_encode, fourier_wavelengths, init_fourier, init_rbf, pair_type, rbf_encode, BinSpec, DistanceEncoding};
use crate::graph::GraphInstance;
use crate::layers::{init_tgt_layer, tgt_layer, Dropout, DropoutSpec, Interaction, LayerDims, Mode};
use crate::nn::{init_layer_norm, init_linear, layer_norm, linear};
use crate::seed::rng_for;
use crate::tensor::snapshot::{self, SnapshotError};
use crate::tensor::{BoundParams, ParamStore, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("graph {id}: {msg}")]
    Input { id: u64, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TgtConfig {
    pub num_layers: usize,
    /// Every `layer_multiplier` consecutive layers share one parameter group.
    pub layer_multiplier: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub heads: usize,
    /// Zero exactly when `interaction` is `none`.
    pub triplet_heads: usize,
    pub interaction: Interaction,
    /// Scalar channel sets of the triangular update; 0 means `edge_dim`.
    pub triangle_sets: usize,
    pub node_ffn_dim: usize,
    pub edge_ffn_dim: usize,
    pub dropout: DropoutSpec,
    pub bins: BinSpec,
    pub encoding: DistanceEncoding,
    pub rbf_kernels: usize,
    pub fourier_kernels: usize,
    pub fourier_min_wavelength: f64,
    pub max_hops: usize,
    pub num_node_types: usize,
    pub num_bond_types: usize,
    /// Width of continuous per-node input features taken from `coords` (0 = unused).
    pub coord_features: usize,
    pub graph_head_dim: usize,
    pub distance_head: bool,
    pub scalar_head: bool,
    pub edge_head: bool,
}

impl Default for TgtConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            layer_multiplier: 1,
            node_dim: 32,
            edge_dim: 16,
            heads: 4,
            triplet_heads: 2,
            interaction: Interaction::TripletAgg,
            triangle_sets: 0,
            node_ffn_dim: 64,
            edge_ffn_dim: 32,
            dropout: DropoutSpec::none(),
            bins: BinSpec::default(),
            encoding: DistanceEncoding::None,
            rbf_kernels: 32,
            fourier_kernels: 32,
            fourier_min_wavelength: 0.1,
            max_hops: crate::graph::DEFAULT_MAX_HOPS,
            num_node_types: 8,
            num_bond_types: 4,
            coord_features: 0,
            graph_head_dim: 32,
            distance_head: true,
            scalar_head: false,
            edge_head: false,
        }
    }
}

impl TgtConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.layer_multiplier == 0 || self.num_layers % self.layer_multiplier != 0 {
            return fail(format!("num_layers {} is not divisible by layer_multiplier {}", self.num_layers, self.layer_multiplier));
        }
        if (self.triplet_heads == 0) != (self.interaction == Interaction::None) {
            return fail(format!("triplet_heads = {} is inconsistent with interaction '{}'", self.triplet_heads, self.interaction.name()));
        }
        if self.node_dim == 0 || self.edge_dim == 0 || self.heads == 0 || self.node_dim % self.heads != 0 {
            return fail(format!("node_dim {} must be a positive multiple of heads {}", self.node_dim, self.heads));
        }
        if self.interaction != Interaction::None && self.interaction != Interaction::Triangular && self.edge_dim % self.triplet_heads != 0 {
            return fail(format!("edge_dim {} is not divisible by triplet_heads {}", self.edge_dim, self.triplet_heads));
        }
        if self.num_node_types == 0 || self.node_ffn_dim == 0 || self.edge_ffn_dim == 0 {
            return fail("num_node_types and FFN dims must be positive".into());
        }
        self.dropout.validate().map_err(ModelError::Config)?;
        self.bins.validate().map_err(ModelError::Config)?;
        match self.encoding {
            DistanceEncoding::Rbf if self.rbf_kernels == 0 => return fail("rbf_kernels must be positive".into()),
            DistanceEncoding::Fourier if self.fourier_kernels == 0 || !(self.fourier_min_wavelength > 0.0 && self.fourier_min_wavelength < self.bins.d_max) => {
                return fail("fourier encoding needs kernels > 0 and 0 < min wavelength < d_max".into())
            }
            _ => {}
        }
        if !(self.distance_head || self.scalar_head || self.edge_head) {
            return fail("at least one output head must be enabled".into());
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.num_layers / self.layer_multiplier.max(1)
    }

    /// Parameter group used by the 0-based layer `layer`.
    pub fn group_of(&self, layer: usize) -> usize {
        layer / self.layer_multiplier.max(1)
    }

    pub fn layer_dims(&self) -> LayerDims {
        let triplet_width = match self.interaction {
            Interaction::Triangular if self.triangle_sets == 0 => self.edge_dim,
            Interaction::Triangular => self.triangle_sets,
            _ => self.triplet_heads,
        };
        LayerDims {
            d_h: self.node_dim,
            d_e: self.edge_dim,
            heads: self.heads,
            triplet_width,
            interaction: self.interaction,
            node_ffn: self.node_ffn_dim,
            edge_ffn: self.edge_ffn_dim,
        }
    }

    fn wavelengths(&self) -> Vec<f64> {
        fourier_wavelengths(self.fourier_kernels, self.fourier_min_wavelength / 2.0, self.bins.d_max)
    }
}

pub fn init_params(cfg: &TgtConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = rng_for(seed, &[0x1417]);
    let mut s = ParamStore::new();
    let (d_h, d_e) = (cfg.node_dim, cfg.edge_dim);
    s.insert_normal("embed.node_type", &[cfg.num_node_types, d_h], 1.0, &mut rng);
    if cfg.coord_features > 0 {
        init_linear(&mut s, "embed.coords", cfg.coord_features, d_h, true, &mut rng);
    }
    s.insert_normal("embed.bond", &[cfg.num_bond_types + 1, d_e], 1.0, &mut rng);
    s.insert_normal("embed.hops", &[cfg.max_hops + 2, d_e], 1.0, &mut rng);
    match cfg.encoding {
        DistanceEncoding::Rbf => init_rbf(&mut s, "embed.rbf", cfg.rbf_kernels, cfg.num_node_types * cfg.num_node_types, d_e, cfg.bins.d_max, &mut rng),
        DistanceEncoding::Fourier => init_fourier(&mut s, "embed.fourier", cfg.fourier_kernels, d_e, &mut rng),
        DistanceEncoding::None => {}
    }
    let dims = cfg.layer_dims();
    for g in 0..cfg.num_groups() {
        init_tgt_layer(&mut s, &format!("layers.{g}"), &dims, &mut rng);
    }
    init_layer_norm(&mut s, "final.ln_h", d_h);
    init_layer_norm(&mut s, "final.ln_e", d_e);
    if cfg.distance_head {
        init_linear(&mut s, "head.distance", d_e, cfg.bins.num_bins, true, &mut rng);
    }
    if cfg.scalar_head {
        init_linear(&mut s, "head.scalar.fc1", d_h, cfg.graph_head_dim, true, &mut rng);
        init_linear(&mut s, "head.scalar.fc2", cfg.graph_head_dim, 1, true, &mut rng);
    }
    if cfg.edge_head {
        init_linear(&mut s, "head.edge", d_e, 1, true, &mut rng);
    }
    Ok(s)
}

/// Total scalar parameters; shared groups are counted once.
pub fn count_params(cfg: &TgtConfig) -> Result<usize> {
    Ok(init_params(cfg, 0)?.count())
}

/// Scalar parameters belonging to the layer stack alone.
pub fn count_layer_params(cfg: &TgtConfig) -> Result<usize> {
    let s = init_params(cfg, 0)?;
    Ok(s.iter().filter(|(n, _)| n.starts_with("layers.")).map(|(_, p)| p.data.len()).sum())
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<()> {
    Ok(snapshot::save(params, path)?)
}

/// Loads a checkpoint and checks it against the parameter layout of `cfg`.
pub fn load_checkpoint(cfg: &TgtConfig, path: &Path) -> Result<ParamStore> {
    let loaded = snapshot::load(path)?;
    snapshot::check_compatible(&init_params(cfg, 0)?, &loaded)?;
    Ok(loaded)
}

pub struct ModelOutputs {
    /// `[1]`
    pub graph_scalar: Option<Tensor>,
    /// Symmetrized logits `[N, N, B]`.
    pub distance_logits: Option<Tensor>,
    /// Symmetrized logits `[N, N]`.
    pub edge_logits: Option<Tensor>,
    /// Final normalized node embeddings `[N, d_h]`.
    pub nodes: Tensor,
    /// Final normalized pair embeddings `[N, N, d_e]`.
    pub pairs: Tensor,
}

/// Forward pass with dropout masks drawn from `rng` (ignored in deterministic mode).
///
/// `distances` (`N * N`, row-major) feeds the distance encoding when the
/// config has one.
pub fn forward(
    cfg: &TgtConfig,
    p: &BoundParams,
    graph: &GraphInstance,
    distances: Option<&[f64]>,
    mode: Mode,
    rng: ChaCha8Rng,
) -> Result<ModelOutputs> {
    forward_with(cfg, p, graph, distances, &mut Dropout::new(cfg.dropout, mode, rng))
}

pub fn forward_with(cfg: &TgtConfig, p: &BoundParams, graph: &GraphInstance, distances: Option<&[f64]>, drop: &mut Dropout) -> Result<ModelOutputs> {
    let n = graph.n;
    let bad = |msg: String| ModelError::Input { id: graph.id, msg };
    let (mut h, mut e) = embed(cfg, p, graph, distances).map_err(|m| match m {
        ModelError::Config(msg) => bad(msg),
        other => other,
    })?;
    let dims = cfg.layer_dims();
    for layer in 0..cfg.num_layers {
        let name = format!("layers.{}", cfg.group_of(layer));
        (h, e) = tgt_layer(p, &name, &dims, &h, &e, drop)?;
    }
    let nodes = layer_norm(p, "final.ln_h", &h)?;
    let pairs = layer_norm(p, "final.ln_e", &e)?;

    let symmetrize = |x: Tensor| -> Result<Tensor> {
        let mut perm: Vec<usize> = (0..x.rank()).collect();
        perm.swap(0, 1);
        Ok(x.add(&x.permute(&perm)?)?.scale(0.5))
    };
    let distance_logits = if cfg.distance_head { Some(symmetrize(linear(p, "head.distance", &pairs)?)?) } else { None };
    let edge_logits = if cfg.edge_head { Some(symmetrize(linear(p, "head.edge", &pairs)?.reshape(&[n, n])?)?) } else { None };
    let graph_scalar = if cfg.scalar_head {
        let pooled = nodes.mean_axis(0, true)?;
        let hidden = linear(p, "head.scalar.fc1", &pooled)?.gelu();
        Some(linear(p, "head.scalar.fc2", &hidden)?.reshape(&[1])?)
    } else {
        None
    };
    Ok(ModelOutputs { graph_scalar, distance_logits, edge_logits, nodes, pairs })
}

fn embed(cfg: &TgtConfig, p: &BoundParams, graph: &GraphInstance, distances: Option<&[f64]>) -> Result<(Tensor, Tensor)> {
    let n = graph.n;
    let fail = |msg: String| Err(ModelError::Config(msg));
    if n == 0 {
        return fail("graph has no nodes".into());
    }
    if let Some(&t) = graph.node_types.iter().find(|&&t| t >= cfg.num_node_types) {
        return fail(format!("node type {t} exceeds num_node_types {}", cfg.num_node_types));
    }
    let mut h = Tensor::embedding(p.get("embed.node_type")?, &graph.node_types)?;
    if cfg.coord_features > 0 {
        let coords = match &graph.coords {
            Some(c) if c.iter().all(|r| r.len() == cfg.coord_features) => c,
            _ => return fail(format!("coord_features = {} but coordinates are missing or mis-sized", cfg.coord_features)),
        };
        let flat: Vec<f64> = coords.iter().flatten().copied().collect();
        h = h.add(&linear(p, "embed.coords", &Tensor::new(flat, &[n, cfg.coord_features])?)?)?;
    }

    let bonds = graph.pair_bond_types();
    if let Some(&b) = bonds.iter().find(|&&b| b > cfg.num_bond_types) {
        return fail(format!("bond type {} exceeds num_bond_types {}", b - 1, cfg.num_bond_types));
    }
    let hops: Vec<usize> = graph.hops.iter().map(|&x| x.min(cfg.max_hops + 1)).collect();
    let mut e = Tensor::embedding(p.get("embed.bond")?, &bonds)?.add(&Tensor::embedding(p.get("embed.hops")?, &hops)?)?;
    if cfg.encoding != DistanceEncoding::None {
        let d = match distances {
            Some(d) if d.len() == n * n => d,
            Some(d) => return fail(format!("expected {} input distances, got {}", n * n, d.len())),
            None => return fail("config has a distance encoding but no input distances were given".into()),
        };
        let enc = match cfg.encoding {
            DistanceEncoding::Rbf => {
                let types: Vec<usize> = (0..n * n).map(|ij| pair_type(graph.node_types[ij / n], graph.node_types[ij % n], cfg.num_node_types)).collect();
                rbf_encode(p, "embed.rbf", &Tensor::new(d.to_vec(), &[n * n])?, &types)?
            }
            _ => fourier_encode(p, "embed.fourier", d, &cfg.wavelengths())?,
        };
        e = e.add(&enc)?;
    }
    Ok((h, e.reshape(&[n, n, cfg.edge_dim])?))
}

/// Fresh generator for a forward pass keyed by `(seed, graph id, sample)`.
pub fn sample_rng(seed: u64, graph_id: u64, sample: u64) -> ChaCha8Rng {
    rng_for(seed, &[graph_id, sample])
}

/// Uniformly perturbs every parameter; handy to move away from symmetric inits in tests.
pub fn jitter(store: &mut ParamStore, scale: f64, rng: &mut impl Rng) {
    for (_, prm) in store.iter_mut() {
        prm.data.iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    }
}
