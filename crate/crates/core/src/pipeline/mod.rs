//! Three-stage training, stochastic inference and evaluation.

mod infer;
pub mod metrics;
mod optim;
mod train;

pub use infer::{stochastic_inference, stochastic_sample, Aggregate, PredictionSampleSet, MODE_BINS};
pub use optim::{clip_gradients, global_norm, Adam, TrainConfig};
pub use train::{
    distance_loss, eval_distance_ce, eval_task_mae, finetune_task_predictor, input_distances, predict_distances, predict_edges,
    sampled_training_distances, train_distance_predictor, train_edge_classifier, train_task_predictor, DistanceModel, DistanceSource,
    LogRow, TargetNorm, TaskModel,
};

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("graph {graph} is missing {what}")]
    MissingData { graph: u64, what: &'static str },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<TensorError> for PipelineError {
    fn from(e: TensorError) -> Self {
        PipelineError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
