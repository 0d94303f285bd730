//! Third-order pair-to-pair interactions.
//!
//! Every mechanism reads the (normalized) pair embeddings `e` of shape
//! `[N, N, d_e]` and returns a pair update of the same shape. Parameter names
//! are shared between mechanisms (`{name}.in.q`, `{name}.out.b`, ...) so that a
//! single store can drive several of them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dropout;
use crate::nn::{init_linear, linear};
use crate::tensor::{BoundParams, ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    None,
    Axial,
    Triangular,
    TripletAgg,
    TripletAtt,
    UngatedAgg,
    UngatedAtt,
}

impl Interaction {
    pub const ALL: [Interaction; 7] = [
        Interaction::None,
        Interaction::Axial,
        Interaction::Triangular,
        Interaction::TripletAgg,
        Interaction::TripletAtt,
        Interaction::UngatedAgg,
        Interaction::UngatedAtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Interaction::None => "none",
            Interaction::Axial => "axial",
            Interaction::Triangular => "triangular",
            Interaction::TripletAgg => "triplet_agg",
            Interaction::TripletAtt => "triplet_att",
            Interaction::UngatedAgg => "ungated_agg",
            Interaction::UngatedAtt => "ungated_att",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    fn uses_qk(self) -> bool {
        matches!(self, Interaction::Axial | Interaction::TripletAtt | Interaction::UngatedAtt)
    }

    fn uses_bias(self) -> bool {
        matches!(self, Interaction::TripletAgg | Interaction::TripletAtt | Interaction::UngatedAgg | Interaction::UngatedAtt)
    }

    fn uses_gate(self) -> bool {
        matches!(self, Interaction::TripletAgg | Interaction::TripletAtt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    In,
    Out,
}

impl Dir {
    fn tag(self) -> &'static str {
        match self {
            Dir::In => "in",
            Dir::Out => "out",
        }
    }
}

/// Registers the parameters of `kind`.
///
/// `width` is the head count for the attention/aggregation mechanisms
/// (each head has dimension `d_e / width`) and the number of scalar channel
/// sets for the triangular update.
pub fn init_interaction(store: &mut ParamStore, name: &str, kind: Interaction, d_e: usize, width: usize, rng: &mut impl Rng) {
    if kind == Interaction::None {
        return;
    }
    for dir in [Dir::In, Dir::Out] {
        let pre = format!("{name}.{}", dir.tag());
        if kind == Interaction::Triangular {
            init_linear(store, &format!("{pre}.left"), d_e, width, true, rng);
            init_linear(store, &format!("{pre}.right"), d_e, width, true, rng);
            continue;
        }
        if kind.uses_qk() {
            init_linear(store, &format!("{pre}.q"), d_e, d_e, true, rng);
            init_linear(store, &format!("{pre}.p"), d_e, d_e, true, rng);
        }
        init_linear(store, &format!("{pre}.v"), d_e, d_e, true, rng);
        if kind.uses_bias() {
            init_linear(store, &format!("{pre}.b"), d_e, width, true, rng);
        }
        if kind.uses_gate() {
            init_linear(store, &format!("{pre}.g"), d_e, width, true, rng);
        }
    }
    let concat = if kind == Interaction::Triangular { 2 * width } else { 2 * d_e };
    init_linear(store, &format!("{name}.proj"), concat, d_e, true, rng);
}

pub struct InteractionOutput {
    /// `[N, N, d_e]`
    pub update: Tensor,
    /// Final weights per direction (inward, outward), after gating and dropout.
    ///
    /// Attention-style mechanisms use layout `[j, head, i, k]`, aggregation uses
    /// `[head, i, k]`; in both the last axis runs over `k`. Empty for the
    /// triangular update.
    pub weights: Vec<Tensor>,
    /// Softmax factors per direction, same layouts as `weights`.
    pub softmax: Vec<Tensor>,
}

pub fn interaction(
    p: &BoundParams,
    name: &str,
    kind: Interaction,
    e: &Tensor,
    width: usize,
    drop: &mut Dropout,
) -> Result<InteractionOutput> {
    let shape = e.shape();
    if shape.len() != 3 || shape[0] != shape[1] {
        return Err(TensorError::InvalidArgument { op: "interaction", msg: format!("pair embeddings must be [N, N, d], got {shape:?}") });
    }
    let (n, d_e) = (shape[0], shape[2]);
    if kind == Interaction::None || n == 0 {
        return Ok(InteractionOutput { update: Tensor::zeros(&[n, n, d_e]), weights: vec![], softmax: vec![] });
    }
    if kind != Interaction::Triangular && (width == 0 || d_e % width != 0) {
        return Err(TensorError::InvalidArgument { op: "interaction", msg: format!("d_e = {d_e} not divisible by {width} heads") });
    }
    let mut outs = Vec::with_capacity(2);
    let mut weights = Vec::new();
    let mut softmax = Vec::new();
    for dir in [Dir::In, Dir::Out] {
        let pre = format!("{name}.{}", dir.tag());
        let o = match kind {
            Interaction::Triangular => triangular(p, &pre, dir, e)?,
            Interaction::TripletAgg | Interaction::UngatedAgg => {
                let (o, w, s) = aggregate(p, &pre, dir, e, width, kind.uses_gate(), drop)?;
                weights.push(w);
                softmax.push(s);
                o
            }
            _ => {
                let (o, w, s) = attend(p, &pre, dir, e, width, kind, drop)?;
                weights.push(w);
                softmax.push(s);
                o
            }
        };
        outs.push(o);
    }
    let update = linear(p, &format!("{name}.proj"), &Tensor::concat(&[&outs[0], &outs[1]], 2)?)?;
    Ok(InteractionOutput { update, weights, softmax })
}

/// Permutation taking a `[x, y, head, c]` pair projection to `[j, head, k, c]`.
/// Inward values/keys are indexed `(j, k)`, outward ones `(k, j)`.
fn jk_perm(dir: Dir) -> [usize; 4] {
    match dir {
        Dir::In => [0, 2, 1, 3],
        Dir::Out => [1, 2, 0, 3],
    }
}

/// Permutation taking a `[x, y, head]` scalar projection to `[head, i, k]`.
/// Inward scalars are indexed `(i, k)`, outward ones `(k, i)`.
fn ik_perm(dir: Dir) -> [usize; 3] {
    match dir {
        Dir::In => [2, 0, 1],
        Dir::Out => [2, 1, 0],
    }
}

fn head_scalars(p: &BoundParams, name: &str, dir: Dir, e: &Tensor) -> Result<Tensor> {
    linear(p, name, e)?.permute(&ik_perm(dir))
}

fn attend(
    p: &BoundParams,
    pre: &str,
    dir: Dir,
    e: &Tensor,
    heads: usize,
    kind: Interaction,
    drop: &mut Dropout,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = e.shape()[0];
    let d = e.shape()[2] / heads;
    let per_head = |t: Tensor, perm: [usize; 4]| t.reshape(&[n, n, heads, d])?.permute(&perm)?.reshape(&[n * heads, n, d]);
    // q_ij laid out per (j, head) as rows i
    let q = per_head(linear(p, &format!("{pre}.q"), e)?, [1, 2, 0, 3])?;
    let k = per_head(linear(p, &format!("{pre}.p"), e)?, jk_perm(dir))?;
    let v = per_head(linear(p, &format!("{pre}.v"), e)?, jk_perm(dir))?;
    let mut scores = q.bmm(&k, false, true)?.scale(1.0 / (d as f64).sqrt()).reshape(&[n, heads, n, n])?;
    if kind.uses_bias() {
        let b = head_scalars(p, &format!("{pre}.b"), dir, e)?.reshape(&[1, heads, n, n])?;
        scores = scores.add(&b)?;
    }
    let soft = scores.softmax(3)?;
    let mut a = soft.clone();
    if kind.uses_gate() {
        let g = head_scalars(p, &format!("{pre}.g"), dir, e)?.sigmoid().reshape(&[1, heads, n, n])?;
        a = a.mul(&g)?;
    }
    if let Some(mask) = drop.triplet_mask(a.shape()) {
        a = a.mul(&mask)?;
    }
    let o = a
        .reshape(&[n * heads, n, n])?
        .bmm(&v, false, false)?
        .reshape(&[n, heads, n, d])?
        .permute(&[2, 0, 1, 3])?
        .reshape(&[n, n, heads * d])?;
    Ok((o, a, soft))
}

fn aggregate(
    p: &BoundParams,
    pre: &str,
    dir: Dir,
    e: &Tensor,
    heads: usize,
    gated: bool,
    drop: &mut Dropout,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = e.shape()[0];
    let d = e.shape()[2] / heads;
    let soft = head_scalars(p, &format!("{pre}.b"), dir, e)?.softmax(2)?;
    let mut a = soft.clone();
    if gated {
        a = a.mul(&head_scalars(p, &format!("{pre}.g"), dir, e)?.sigmoid())?;
    }
    if let Some(mask) = drop.triplet_mask(a.shape()) {
        a = a.mul(&mask)?;
    }
    // values as [head, k, (j, c)] so each head is one matrix product
    let v_perm = match dir {
        Dir::In => [2, 1, 0, 3],
        Dir::Out => [2, 0, 1, 3],
    };
    let v = linear(p, &format!("{pre}.v"), e)?.reshape(&[n, n, heads, d])?.permute(&v_perm)?.reshape(&[heads, n, n * d])?;
    let o = a.bmm(&v, false, false)?.reshape(&[heads, n, n, d])?.permute(&[1, 2, 0, 3])?.reshape(&[n, n, heads * d])?;
    Ok((o, a, soft))
}

fn triangular(p: &BoundParams, pre: &str, dir: Dir, e: &Tensor) -> Result<Tensor> {
    // [s, x, y] from the [x, y, s] projections
    let left = linear(p, &format!("{pre}.left"), e)?.permute(&[2, 0, 1])?;
    let right = linear(p, &format!("{pre}.right"), e)?.permute(&[2, 0, 1])?;
    let o = match dir {
        Dir::In => left.bmm(&right, false, true)?,
        Dir::Out => left.bmm(&right, true, false)?,
    };
    o.permute(&[1, 2, 0])
}
