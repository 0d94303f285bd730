use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::tensor::ParamStore;

/// Optimizer and schedule settings shared by all training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f64,
    /// Weight of the auxiliary distance cross-entropy in task training.
    pub distance_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 1e-3,
            min_lr: 1e-5,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
            distance_loss_weight: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || self.min_lr < 0.0 || self.min_lr > self.lr {
            return Err(format!("need 0 <= min_lr <= lr and lr > 0 (lr = {}, min_lr = {})", self.lr, self.min_lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err("betas must lie in [0, 1) and adam_eps must be positive".into());
        }
        if self.clip_norm < 0.0 || self.weight_decay < 0.0 || self.distance_loss_weight < 0.0 {
            return Err("clip_norm, weight_decay and distance_loss_weight must be >= 0".into());
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then cosine decay to `min_lr` at the final step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (PI * t).cos())
    }
}

pub fn global_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (name, param) in store.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps);
                param.data[i] -= lr * (update + cfg.weight_decay * param.data[i]);
            }
        }
    }
}
