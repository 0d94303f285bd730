use rand::Rng;

use super::{egt_attention, ffn, init_egt_attention, init_ffn, init_interaction, interaction, path_drop, Dropout, Interaction};
use crate::nn::{init_layer_norm, layer_norm};
use crate::tensor::{BoundParams, ParamStore, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerDims {
    pub d_h: usize,
    pub d_e: usize,
    pub heads: usize,
    /// Triplet heads, or channel sets for the triangular update.
    pub triplet_width: usize,
    pub interaction: Interaction,
    pub node_ffn: usize,
    pub edge_ffn: usize,
}

pub fn init_tgt_layer(store: &mut ParamStore, name: &str, dims: &LayerDims, rng: &mut impl Rng) {
    init_layer_norm(store, &format!("{name}.ln_h_att"), dims.d_h);
    init_layer_norm(store, &format!("{name}.ln_e_att"), dims.d_e);
    init_egt_attention(store, &format!("{name}.att"), dims.d_h, dims.d_e, dims.heads, rng);
    if dims.interaction != Interaction::None {
        init_layer_norm(store, &format!("{name}.ln_tri"), dims.d_e);
        init_interaction(store, &format!("{name}.tri"), dims.interaction, dims.d_e, dims.triplet_width, rng);
    }
    init_layer_norm(store, &format!("{name}.ln_h_ffn"), dims.d_h);
    init_ffn(store, &format!("{name}.ffn_h"), dims.d_h, dims.node_ffn, rng);
    init_layer_norm(store, &format!("{name}.ln_e_ffn"), dims.d_e);
    init_ffn(store, &format!("{name}.ffn_e"), dims.d_e, dims.edge_ffn, rng);
}

/// One pre-norm TGT layer: pair-biased node attention, the third-order pair
/// module, then separate node and pair FFNs, each as a residual branch.
pub fn tgt_layer(p: &BoundParams, name: &str, dims: &LayerDims, h: &Tensor, e: &Tensor, drop: &mut Dropout) -> Result<(Tensor, Tensor)> {
    let n = h.shape()[0];
    let h_n = layer_norm(p, &format!("{name}.ln_h_att"), h)?;
    let e_n = layer_norm(p, &format!("{name}.ln_e_att"), e)?;
    let mask = drop.source_mask(n);
    let att = egt_attention(p, &format!("{name}.att"), &h_n, &e_n, dims.heads, mask.as_deref())?;
    let mut h = h.add(&path_drop(att.node_update, drop.path_factor()))?;
    let mut e = e.add(&path_drop(att.pair_update, drop.path_factor()))?;

    if dims.interaction != Interaction::None {
        let e_n = layer_norm(p, &format!("{name}.ln_tri"), &e)?;
        let tri = interaction(p, &format!("{name}.tri"), dims.interaction, &e_n, dims.triplet_width, drop)?;
        e = e.add(&path_drop(tri.update, drop.path_factor()))?;
    }

    let h_n = layer_norm(p, &format!("{name}.ln_h_ffn"), &h)?;
    h = h.add(&path_drop(ffn(p, &format!("{name}.ffn_h"), &h_n, drop)?, drop.path_factor()))?;
    let e_n = layer_norm(p, &format!("{name}.ln_e_ffn"), &e)?;
    e = e.add(&path_drop(ffn(p, &format!("{name}.ffn_e"), &e_n, drop)?, drop.path_factor()))?;
    Ok((h, e))
}
