//! Parameter initialisation and the two affine building blocks everything else uses.

use rand::Rng;

use crate::tensor::{BoundParams, ParamStore, Result, Tensor, TensorError};

pub const LN_EPS: f64 = 1e-5;

pub fn init_linear(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) {
    store.insert_xavier(format!("{name}.weight"), fan_in, fan_out, rng);
    if bias {
        store.insert_const(format!("{name}.bias"), &[fan_out], 0.0);
    }
}

/// `x @ W (+ b)` over the last axis of `x`.
pub fn linear(p: &BoundParams, name: &str, x: &Tensor) -> Result<Tensor> {
    let w = p.get(&format!("{name}.weight"))?;
    let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
    let shape = x.shape();
    if shape.last() != Some(&fan_in) {
        return Err(TensorError::ShapeMismatch { op: "linear", lhs: shape.to_vec(), rhs: w.shape().to_vec() });
    }
    let rows = x.numel() / fan_in.max(1);
    let mut y = x.reshape(&[rows, fan_in])?.matmul(w)?;
    let bias_name = format!("{name}.bias");
    if p.contains(&bias_name) {
        y = y.add(p.get(&bias_name)?)?;
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = fan_out;
    y.reshape(&out_shape)
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, dim: usize) {
    store.insert_const(format!("{name}.gamma"), &[dim], 1.0);
    store.insert_const(format!("{name}.beta"), &[dim], 0.0);
}

pub fn layer_norm(p: &BoundParams, name: &str, x: &Tensor) -> Result<Tensor> {
    x.layer_norm(p.get(&format!("{name}.gamma"))?, p.get(&format!("{name}.beta"))?, LN_EPS)
}
