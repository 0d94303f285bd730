use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{clip_gradients, global_norm, Adam, TrainConfig};
use super::{PipelineError, Result};
use crate::graph::{pairwise_distances, GraphInstance};
use crate::layers::Mode;
use crate::model::{forward, ModelOutputs, TgtConfig};
use crate::noising::{smooth_noise, NoiseConfig};
use crate::seed::rng_for;
use crate::tensor::{no_grad, BoundParams, ParamStore, Tensor};

// stream tags for derived seeds
const ORDER: u64 = 0x0D;
const DROPOUT: u64 = 0xD0;
const NOISE: u64 = 0x40;
const SAMPLE: u64 = 0x5A;

/// Where the distance-encoding input of a model comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DistanceSource {
    /// The model has no distance input.
    None,
    /// Exact distances stored with the graph.
    Exact,
    /// Distances recomputed from smooth-noised coordinates.
    Noised(NoiseConfig),
}

#[derive(Debug, Clone)]
pub struct DistanceModel {
    pub cfg: TgtConfig,
    pub params: ParamStore,
}

/// Standardization of scalar targets; the network predicts `(y - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetNorm {
    pub mean: f64,
    pub std: f64,
}

impl TargetNorm {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn fit(targets: &[f64]) -> Self {
        if targets.is_empty() {
            return Self::identity();
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn encode(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn decode(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone)]
pub struct TaskModel {
    pub cfg: TgtConfig,
    pub params: ParamStore,
    pub norm: TargetNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub task_loss: f64,
    pub distance_loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

impl LogRow {
    pub const HEADER: [&'static str; 7] = ["step", "lr", "loss", "task_loss", "distance_loss", "grad_norm", "clipped_norm"];

    pub fn to_fields(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.lr.to_string(),
            self.loss.to_string(),
            self.task_loss.to_string(),
            self.distance_loss.to_string(),
            self.grad_norm.to_string(),
            self.clipped_norm.to_string(),
        ]
    }
}

/// One graph's contribution: the loss tensor and its task/distance parts.
struct GraphLoss {
    loss: Tensor,
    task: f64,
    distance: f64,
}

/// Epoch-wise shuffled mini-batches; the order depends only on the seed.
struct Batcher {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        Self { n, order: Vec::new(), pos: 0, epoch: 0, seed }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut rng_for(self.seed, &[ORDER, self.epoch]));
                self.epoch += 1;
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn run_training<F>(store: &mut ParamStore, tc: &TrainConfig, n_data: usize, seed: u64, mut graph_loss: F) -> Result<Vec<LogRow>>
where
    F: FnMut(&BoundParams, usize, usize) -> Result<GraphLoss>,
{
    tc.validate().map_err(PipelineError::Config)?;
    if n_data == 0 {
        return Err(PipelineError::Config("training set is empty".into()));
    }
    let mut batcher = Batcher::new(n_data, seed);
    let mut opt = Adam::new();
    let mut log = Vec::with_capacity(tc.steps);
    let inv_b = 1.0 / tc.batch_size as f64;
    for step in 0..tc.steps {
        let p = store.bind(true)?;
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let (mut loss, mut task, mut distance) = (0.0, 0.0, 0.0);
        for idx in batcher.next(tc.batch_size) {
            let gl = graph_loss(&p, idx, step)?;
            let value = gl.loss.item();
            if !value.is_finite() {
                return Err(PipelineError::NonFiniteLoss { step });
            }
            loss += value * inv_b;
            task += gl.task * inv_b;
            distance += gl.distance * inv_b;
            let g = gl.loss.scale(inv_b).backward()?;
            for (name, gv) in p.gradients(&g) {
                match grads.get_mut(&name) {
                    Some(acc) => acc.iter_mut().zip(gv).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(name, gv);
                    }
                }
            }
        }
        let grad_norm = clip_gradients(&mut grads, tc.clip_norm);
        if !grad_norm.is_finite() {
            return Err(PipelineError::NonFiniteLoss { step });
        }
        let lr = tc.lr_at(step);
        opt.step(store, &grads, lr, tc);
        log.push(LogRow { step, lr, loss, task_loss: task, distance_loss: distance, grad_norm, clipped_norm: global_norm(&grads) });
    }
    Ok(log)
}

fn require<'a, T>(value: Option<&'a T>, graph: &GraphInstance, what: &'static str) -> Result<&'a T> {
    value.ok_or(PipelineError::MissingData { graph: graph.id, what })
}

/// Input distances for `g` from `source`; noise draws come from `rng_path`.
pub fn input_distances(source: &DistanceSource, g: &GraphInstance, seed: u64, rng_path: &[u64]) -> Result<Option<Vec<f64>>> {
    match source {
        DistanceSource::None => Ok(None),
        DistanceSource::Exact => match &g.target_distances {
            Some(d) => Ok(Some(d.clone())),
            None => Ok(Some(pairwise_distances(require(g.coords.as_ref(), g, "coords")?))),
        },
        DistanceSource::Noised(noise) => {
            let coords = require(g.coords.as_ref(), g, "coords")?;
            let noised = smooth_noise(coords, noise, &mut rng_for(seed, rng_path));
            Ok(Some(pairwise_distances(&noised)))
        }
    }
}

/// Binned cross-entropy over off-diagonal pairs.
pub fn distance_loss(cfg: &TgtConfig, out: &ModelOutputs, g: &GraphInstance) -> Result<Tensor> {
    let logits = out.distance_logits.as_ref().ok_or_else(|| PipelineError::Config("model has no distance head".into()))?;
    let d = require(g.target_distances.as_ref(), g, "target_distances")?;
    let n = g.n;
    let targets: Vec<usize> = d.iter().map(|&x| cfg.bins.bin(x)).collect();
    let include: Vec<bool> = (0..n * n).map(|ij| ij / n != ij % n).collect();
    if n < 2 {
        return Ok(Tensor::scalar(0.0));
    }
    Ok(logits.reshape(&[n * n, cfg.bins.num_bins])?.cross_entropy(&targets, Some(&include))?)
}

fn check_distance_input(cfg: &TgtConfig, source: &DistanceSource) -> Result<()> {
    let wants = cfg.encoding != crate::encodings::DistanceEncoding::None;
    let has = *source != DistanceSource::None;
    if wants != has {
        return Err(PipelineError::Config(format!(
            "distance encoding '{:?}' does not match the distance source {:?}",
            cfg.encoding, source
        )));
    }
    Ok(())
}

/// Stage 1: binned distance prediction from the graph (plus an optional input estimate).
pub fn train_distance_predictor(model: &mut DistanceModel, data: &[GraphInstance], source: &DistanceSource, tc: &TrainConfig, seed: u64) -> Result<Vec<LogRow>> {
    check_distance_input(&model.cfg, source)?;
    if !model.cfg.distance_head {
        return Err(PipelineError::Config("distance predictor needs a distance head".into()));
    }
    for g in data {
        require(g.target_distances.as_ref(), g, "target_distances")?;
    }
    let cfg = model.cfg.clone();
    run_training(&mut model.params, tc, data.len(), seed, |p, idx, step| {
        let g = &data[idx];
        let path = [step as u64, g.id];
        let dist = input_distances(source, g, seed, &[NOISE, path[0], path[1]])?;
        let out = forward(&cfg, p, g, dist.as_deref(), Mode::Train, rng_for(seed, &[DROPOUT, path[0], path[1]]))?;
        let loss = distance_loss(&cfg, &out, g)?;
        let ce = loss.item();
        Ok(GraphLoss { loss, task: 0.0, distance: ce })
    })
}

/// Held-out binned cross-entropy, averaged over all off-diagonal pairs.
pub fn eval_distance_ce(model: &DistanceModel, data: &[GraphInstance], source: &DistanceSource, seed: u64) -> Result<f64> {
    let p = model.params.bind(false)?;
    let (mut total, mut pairs) = (0.0, 0usize);
    no_grad(|| {
        for g in data {
            let dist = input_distances(source, g, seed, &[NOISE, u64::MAX, g.id])?;
            let out = forward(&model.cfg, &p, g, dist.as_deref(), Mode::DeterministicEval, rng_for(seed, &[]))?;
            let count = g.n * (g.n - 1);
            total += distance_loss(&model.cfg, &out, g)?.item() * count as f64;
            pairs += count;
        }
        Ok(total / pairs.max(1) as f64)
    })
}

/// Distances decoded from the most likely bin of each pair; the diagonal is 0.
pub fn predict_distances(model: &DistanceModel, p: &BoundParams, g: &GraphInstance, mode: Mode, seed: u64, path: &[u64]) -> Result<Vec<f64>> {
    no_grad(|| {
        let out = forward(&model.cfg, p, g, None, mode, rng_for(seed, path))?;
        let logits = out.distance_logits.ok_or_else(|| PipelineError::Config("distance model has no distance head".into()))?;
        let b = model.cfg.bins.num_bins;
        let n = g.n;
        Ok(logits
            .data()
            .chunks(b)
            .enumerate()
            .map(|(ij, row)| {
                if ij / n == ij % n {
                    return 0.0;
                }
                let best = (0..b).fold(0, |best, k| if row[k] > row[best] { k } else { best });
                model.cfg.bins.center(best)
            })
            .collect())
    })
}

fn task_graph_loss(cfg: &TgtConfig, norm: &TargetNorm, tc: &TrainConfig, p: &BoundParams, g: &GraphInstance, dist: Option<&[f64]>, rng: rand_chacha::ChaCha8Rng) -> Result<GraphLoss> {
    let y = *require(g.target_scalar.as_ref(), g, "target_scalar")?;
    let out = forward(cfg, p, g, dist, Mode::Train, rng)?;
    let pred = out.graph_scalar.as_ref().ok_or_else(|| PipelineError::Config("task model has no scalar head".into()))?;
    let task = pred.add_scalar(-norm.encode(y)).abs().sum();
    let w = tc.distance_loss_weight;
    if w == 0.0 {
        let t = task.item();
        return Ok(GraphLoss { loss: task, task: t, distance: 0.0 });
    }
    let ce = distance_loss(cfg, &out, g)?;
    let (t, d) = (task.item(), ce.item());
    Ok(GraphLoss { loss: task.add(&ce.scale(w))?, task: t, distance: d })
}

fn check_task_model(cfg: &TgtConfig, tc: &TrainConfig) -> Result<()> {
    if !cfg.scalar_head {
        return Err(PipelineError::Config("task predictor needs a scalar head".into()));
    }
    if tc.distance_loss_weight > 0.0 && !cfg.distance_head {
        return Err(PipelineError::Config("distance_loss_weight > 0 needs a distance head on the task predictor".into()));
    }
    Ok(())
}

/// Task predictor training on distances from `source`; with smooth-noised
/// coordinates this is the noisy pretraining stage. The target normalization
/// is fitted on `data` and stored in the model.
pub fn train_task_predictor(model: &mut TaskModel, data: &[GraphInstance], source: &DistanceSource, tc: &TrainConfig, seed: u64) -> Result<Vec<LogRow>> {
    check_task_model(&model.cfg, tc)?;
    check_distance_input(&model.cfg, source)?;
    if matches!(source, DistanceSource::Noised(_)) {
        for g in data {
            require(g.coords.as_ref(), g, "coords")?;
        }
    }
    let targets: Vec<f64> = data.iter().map(|g| require(g.target_scalar.as_ref(), g, "target_scalar").copied()).collect::<Result<_>>()?;
    model.norm = TargetNorm::fit(&targets);
    let (cfg, norm) = (model.cfg.clone(), model.norm);
    run_training(&mut model.params, tc, data.len(), seed, |p, idx, step| {
        let g = &data[idx];
        let dist = input_distances(source, g, seed, &[NOISE, step as u64, g.id])?;
        task_graph_loss(&cfg, &norm, tc, p, g, dist.as_deref(), rng_for(seed, &[DROPOUT, step as u64, g.id]))
    })
}

/// Stage 3: finetunes on distances sampled from the frozen distance predictor
/// in stochastic mode. The distance model is only read.
pub fn finetune_task_predictor(model: &mut TaskModel, distance: &DistanceModel, data: &[GraphInstance], tc: &TrainConfig, seed: u64) -> Result<Vec<LogRow>> {
    check_task_model(&model.cfg, tc)?;
    if model.cfg.bins != distance.cfg.bins {
        return Err(PipelineError::Config(format!("bin specs differ: task {:?} vs distance {:?}", model.cfg.bins, distance.cfg.bins)));
    }
    check_distance_input(&model.cfg, &DistanceSource::Exact)?;
    let dist_p = distance.params.bind(false)?;
    let (cfg, norm) = (model.cfg.clone(), model.norm);
    run_training(&mut model.params, tc, data.len(), seed, |p, idx, step| {
        let g = &data[idx];
        let d = sampled_training_distances(distance, &dist_p, g, seed, step)?;
        task_graph_loss(&cfg, &norm, tc, p, g, Some(&d), rng_for(seed, &[DROPOUT, step as u64, g.id]))
    })
}

/// The distances stage 3 feeds the task predictor for `g` at `step`.
pub fn sampled_training_distances(distance: &DistanceModel, p: &BoundParams, g: &GraphInstance, seed: u64, step: usize) -> Result<Vec<f64>> {
    predict_distances(distance, p, g, Mode::StochasticEval, seed, &[SAMPLE, step as u64, g.id])
}

/// Deterministic task MAE (original units) with deterministic predicted distances,
/// or with distances from `source` when no distance model is given.
pub fn eval_task_mae(model: &TaskModel, distance: Option<&DistanceModel>, data: &[GraphInstance], source: &DistanceSource, seed: u64) -> Result<f64> {
    let p = model.params.bind(false)?;
    let dist_p = distance.map(|d| d.params.bind(false)).transpose()?;
    let mut preds = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for g in data {
        let dist = match (distance, &dist_p) {
            (Some(dm), Some(dp)) => Some(predict_distances(dm, dp, g, Mode::DeterministicEval, seed, &[])?),
            _ => input_distances(source, g, seed, &[NOISE, u64::MAX, g.id])?,
        };
        let z = no_grad(|| forward(&model.cfg, &p, g, dist.as_deref(), Mode::DeterministicEval, rng_for(seed, &[])))?
            .graph_scalar
            .ok_or_else(|| PipelineError::Config("task model has no scalar head".into()))?
            .item();
        preds.push(model.norm.decode(z));
        targets.push(*require(g.target_scalar.as_ref(), g, "target_scalar")?);
    }
    Ok(super::metrics::mae(&preds, &targets))
}

/// Pair-level binary classification (e.g. tour edges) over the graph's edges.
pub fn train_edge_classifier(model: &mut DistanceModel, data: &[GraphInstance], source: &DistanceSource, tc: &TrainConfig, seed: u64) -> Result<Vec<LogRow>> {
    check_distance_input(&model.cfg, source)?;
    if !model.cfg.edge_head {
        return Err(PipelineError::Config("edge classifier needs an edge head".into()));
    }
    for g in data {
        require(g.edge_labels.as_ref(), g, "edge_labels")?;
    }
    let cfg = model.cfg.clone();
    run_training(&mut model.params, tc, data.len(), seed, |p, idx, step| {
        let g = &data[idx];
        let dist = input_distances(source, g, seed, &[NOISE, step as u64, g.id])?;
        let out = forward(&cfg, p, g, dist.as_deref(), Mode::Train, rng_for(seed, &[DROPOUT, step as u64, g.id]))?;
        let labels: Vec<f64> = g.edge_labels.as_ref().unwrap().iter().map(|&l| l as f64).collect();
        let loss = out.edge_logits.unwrap().bce_with_logits(&labels, Some(&g.adjacency()))?;
        let v = loss.item();
        Ok(GraphLoss { loss, task: v, distance: 0.0 })
    })
}

/// Edge predictions (`logit > 0`) and labels over unordered graph edges.
pub fn predict_edges(model: &DistanceModel, data: &[GraphInstance], source: &DistanceSource, seed: u64) -> Result<(Vec<bool>, Vec<bool>)> {
    let p = model.params.bind(false)?;
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for g in data {
        let labels = require(g.edge_labels.as_ref(), g, "edge_labels")?;
        let dist = input_distances(source, g, seed, &[NOISE, u64::MAX, g.id])?;
        let out = no_grad(|| forward(&model.cfg, &p, g, dist.as_deref(), Mode::DeterministicEval, rng_for(seed, &[])))?;
        let logits = out.edge_logits.ok_or_else(|| PipelineError::Config("model has no edge head".into()))?;
        let adj = g.adjacency();
        for i in 0..g.n {
            for j in i + 1..g.n {
                if adj[i * g.n + j] {
                    pred.push(logits.data()[i * g.n + j] > 0.0);
                    truth.push(labels[i * g.n + j] == 1);
                }
            }
        }
    }
    Ok((pred, truth))
}
