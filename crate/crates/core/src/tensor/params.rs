use std::collections::BTreeMap;

use rand::Rng;

use super::{Gradients, Result, Tensor, TensorError};

/// A named, owned parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameters, iterated in name order.
///
/// The store is plain data (`Send + Sync`); autodiff leaves are created per
/// forward pass with [`ParamStore::bind`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.insert(name.into(), Param { shape: shape.to_vec(), data });
    }

    /// Uniform(-bound, bound) initialization with `bound = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_xavier(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, &[fan_in, fan_out], data);
    }

    pub fn insert_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) {
        let n = shape.iter().product();
        self.insert(name, shape, vec![value; n]);
    }

    pub fn insert_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let n: usize = shape.iter().product();
        let normal = rand_distr::Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| rng.sample(normal)).collect();
        self.insert(name, shape, data);
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params.get_mut(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Creates one autodiff leaf per parameter.
    pub fn bind(&self, requires_grad: bool) -> Result<BoundParams> {
        let mut leaves = BTreeMap::new();
        for (name, p) in &self.params {
            let t = if requires_grad {
                Tensor::param(p.data.clone(), &p.shape)?
            } else {
                Tensor::new(p.data.clone(), &p.shape)?
            };
            leaves.insert(name.clone(), t);
        }
        Ok(BoundParams { leaves })
    }

    /// Order-sensitive FNV-1a digest over names, shapes and value bits.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, p) in &self.params {
            feed(name.as_bytes());
            for d in &p.shape {
                feed(&(*d as u64).to_le_bytes());
            }
            for v in &p.data {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Parameters bound as autodiff leaves for one forward pass.
#[derive(Debug, Clone)]
pub struct BoundParams {
    leaves: BTreeMap<String, Tensor>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.leaves.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.leaves.contains_key(name)
    }

    /// Gradient per parameter name; parameters the loss did not touch get zeros.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.leaves.iter().map(|(n, t)| (n.clone(), grads.get_or_zeros(t))).collect()
    }
}
