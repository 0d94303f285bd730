use serde::{Deserialize, Serialize};

use super::train::{predict_distances, DistanceModel, TaskModel};
use super::{PipelineError, Result};
use crate::graph::GraphInstance;
use crate::layers::Mode;
use crate::model::{forward, sample_rng};
use crate::tensor::{no_grad, BoundParams};

/// Histogram resolution used for the mode of continuous samples.
pub const MODE_BINS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Mean,
    Median,
    Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSampleSet {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub mode: f64,
    /// Reciprocal sample standard deviation; absent for a single sample.
    pub confidence: Option<f64>,
}

impl PredictionSampleSet {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(PipelineError::Config("need at least one sample".into()));
        }
        let k = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
        let mode = histogram_mode(&sorted);
        let confidence = (samples.len() > 1).then(|| {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
            1.0 / var.sqrt()
        });
        Ok(Self { samples, mean, median, mode, confidence })
    }

    pub fn aggregate(&self, how: Aggregate) -> f64 {
        match how {
            Aggregate::Mean => self.mean,
            Aggregate::Median => self.median,
            Aggregate::Mode => self.mode,
        }
    }
}

/// Center of the fullest of [`MODE_BINS`] equal-width bins over the sample range
/// (lowest bin wins ties).
fn histogram_mode(sorted: &[f64]) -> f64 {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        return lo;
    }
    let width = (hi - lo) / MODE_BINS as f64;
    let mut counts = [0usize; MODE_BINS];
    for &s in sorted {
        counts[(((s - lo) / width) as usize).min(MODE_BINS - 1)] += 1;
    }
    let best = (0..MODE_BINS).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    lo + (best as f64 + 0.5) * width
}

/// One stochastic (distance sample -> task prediction) pass for sample `s`.
/// Every pass draws from its own stream keyed by `(seed, graph id, s)`, so
/// passes are independent of evaluation order.
pub fn stochastic_sample(
    distance: &DistanceModel,
    dist_p: &BoundParams,
    task: &TaskModel,
    task_p: &BoundParams,
    g: &GraphInstance,
    seed: u64,
    s: u64,
) -> Result<f64> {
    let d = predict_distances(distance, dist_p, g, Mode::StochasticEval, seed, &[g.id, 2 * s])?;
    let z = no_grad(|| forward(&task.cfg, task_p, g, Some(&d), Mode::StochasticEval, sample_rng(seed, g.id, 2 * s + 1)))?
        .graph_scalar
        .ok_or_else(|| PipelineError::Config("task model has no scalar head".into()))?
        .item();
    Ok(task.norm.decode(z))
}

pub fn stochastic_inference(distance: &DistanceModel, task: &TaskModel, g: &GraphInstance, k: usize, seed: u64) -> Result<PredictionSampleSet> {
    if k == 0 {
        return Err(PipelineError::Config("K must be at least 1".into()));
    }
    let dist_p = distance.params.bind(false)?;
    let task_p = task.params.bind(false)?;
    let samples = (0..k as u64).map(|s| stochastic_sample(distance, &dist_p, task, &task_p, g, seed, s)).collect::<Result<Vec<_>>>()?;
    PredictionSampleSet::from_samples(samples)
}
