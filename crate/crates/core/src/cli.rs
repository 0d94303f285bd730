//! The `tgt` command-line front end. Every subcommand reads one TOML run
//! config; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{bench_mechanism, BenchConfig, BenchTarget};
use crate::graph::{gen_geometry_dataset, gen_tsp_dataset, read_dataset, write_dataset, GeometryParams, GraphError, GraphInstance};
use crate::layers::Interaction;
use crate::model::{init_params, load_checkpoint, save_checkpoint, ModelError, TgtConfig};
use crate::noising::NoiseConfig;
use crate::pipeline::metrics::{confidence_curve, f1_score, mae, normalize_confidence, spearman, write_csv};
use crate::pipeline::{
    eval_distance_ce, eval_task_mae, finetune_task_predictor, predict_edges, stochastic_inference, train_distance_predictor, train_edge_classifier,
    train_task_predictor, Aggregate, DistanceModel, DistanceSource, LogRow, PipelineError, PredictionSampleSet, TargetNorm, TaskModel, TrainConfig,
};
use crate::tensor::snapshot::SnapshotError;
use crate::tensor::TensorError;
use crate::verify;

/// Environment variable holding the worker-thread count for parallel inference.
pub const THREADS_ENV: &str = "TGT_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tgt", about = "Triplet Graph Transformer: data, training, inference and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir` from the config.
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/test datasets.
    GenData(Common),
    /// Run the training stage named in `[train]`.
    Train(Common),
    /// Evaluate the checkpoint of the configured stage on the test set.
    Eval(Common),
    /// Stochastic inference with confidence and sample-count curves.
    Infer(Common),
    /// Time mechanisms or layers across graph sizes.
    Bench(Common),
    /// Run the built-in gradient, oracle and invariant checks.
    Verify(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Geometry,
    Tsp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataKind,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub tsp_points: usize,
    pub tsp_k: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::Geometry,
            train_path: "data/train.jsonl".into(),
            test_path: "data/test.jsonl".into(),
            train_count: 1000,
            test_count: 200,
            min_nodes: 8,
            max_nodes: 16,
            tsp_points: 12,
            tsp_k: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DistancePretrain,
    TaskPretrain,
    TaskFinetune,
    SingleStage,
    EdgeClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceInput {
    None,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSection {
    pub stage: Stage,
    /// Distance input of the distance-predictor and edge-classifier stages.
    pub distance_input: DistanceInput,
}

impl Default for StageSection {
    fn default() -> Self {
        Self { stage: Stage::DistancePretrain, distance_input: DistanceInput::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub samples: usize,
    pub aggregate: Aggregate,
    pub ewt_threshold: f64,
    pub confidence_grid: Vec<f64>,
    /// Sample counts reported in the sample-count curve (each at most `samples`).
    pub sample_counts: Vec<usize>,
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            samples: 20,
            aggregate: Aggregate::Mean,
            ewt_threshold: 0.02,
            confidence_grid: (0..10).map(|i| i as f64 / 10.0).collect(),
            sample_counts: vec![1, 2, 4, 8, 16],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchLevel {
    Layer,
    Mechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub level: BenchLevel,
    pub interactions: Vec<Interaction>,
    pub n_list: Vec<usize>,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub heads: usize,
    pub triplet_heads: usize,
    pub reps: usize,
    pub warmup: usize,
    pub backward: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            level: BenchLevel::Layer,
            interactions: vec![Interaction::None, Interaction::TripletAgg, Interaction::TripletAtt],
            n_list: b.n_list,
            node_dim: b.node_dim,
            edge_dim: b.edge_dim,
            heads: b.heads,
            triplet_heads: b.triplet_heads,
            reps: b.reps,
            warmup: b.warmup,
            backward: b.backward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Floating-point width in bits; only 64 is supported.
    pub precision: u32,
    pub data: DataSection,
    pub distance_model: TgtConfig,
    pub task_model: TgtConfig,
    pub train: StageSection,
    pub optim: TrainConfig,
    pub noise: NoiseConfig,
    pub infer: InferSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            precision: 64,
            data: DataSection::default(),
            distance_model: TgtConfig::default(),
            task_model: TgtConfig { scalar_head: true, distance_head: true, encoding: crate::encodings::DistanceEncoding::Rbf, ..TgtConfig::default() },
            train: StageSection::default(),
            optim: TrainConfig::default(),
            noise: NoiseConfig::default(),
            infer: InferSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.precision != 64 {
            return Err(CliError::Config(format!("precision {} is not supported; only 64-bit floats are implemented", self.precision)));
        }
        let d = &self.data;
        if d.min_nodes > d.max_nodes {
            return Err(CliError::Config("data.min_nodes exceeds data.max_nodes".into()));
        }
        self.optim.validate().map_err(|e| CliError::Config(format!("optim: {e}")))?;
        self.noise.validate().map_err(|e| CliError::Config(format!("noise: {e}")))?;
        if self.infer.samples == 0 || self.infer.sample_counts.iter().any(|&k| k == 0 || k > self.infer.samples) {
            return Err(CliError::Config("infer.samples must be positive and bound every entry of infer.sample_counts".into()));
        }
        Ok(())
    }

    fn checkpoint(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Data(String),
    Numeric(String),
    Verify(String),
    Internal(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Verify(_) => "verify",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Verify(_) => 6,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Data(m) | CliError::Numeric(m) | CliError::Verify(m) | CliError::Internal(m) => m,
        }
    }

    /// One-line JSON object with `error` (category) and `message`.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.category(), "message": self.message() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite => CliError::Numeric(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Input { .. } => CliError::Data(e.to_string()),
            ModelError::Snapshot(SnapshotError::Io { .. }) => CliError::Io(e.to_string()),
            ModelError::Snapshot(_) => CliError::Data(e.to_string()),
            ModelError::Tensor(t) => t.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => CliError::Config(e.to_string()),
            PipelineError::MissingData { .. } => CliError::Data(e.to_string()),
            PipelineError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            PipelineError::Model(m) => m.into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    write_csv(path, header, rows).map_err(io_err(path))
}

fn load_data(path: &Path) -> Result<Vec<GraphInstance>, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("dataset not found: {}", path.display())));
    }
    Ok(read_dataset(path)?)
}

fn load_model(cfg: &TgtConfig, path: &Path) -> Result<crate::tensor::ParamStore, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("checkpoint not found: {}", path.display())));
    }
    Ok(load_checkpoint(cfg, path)?)
}

fn norm_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("norm.json")
}

fn save_task(model: &TaskModel, path: &Path) -> Result<(), CliError> {
    save_checkpoint(&model.params, path)?;
    let p = norm_path(path);
    std::fs::write(&p, serde_json::to_string(&model.norm).expect("plain struct")).map_err(io_err(&p))
}

fn load_task(cfg: &TgtConfig, path: &Path) -> Result<TaskModel, CliError> {
    let params = load_model(cfg, path)?;
    let p = norm_path(path);
    let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
    let norm: TargetNorm = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    Ok(TaskModel { cfg: cfg.clone(), params, norm })
}

fn source(input: DistanceInput) -> DistanceSource {
    match input {
        DistanceInput::None => DistanceSource::None,
        DistanceInput::Exact => DistanceSource::Exact,
    }
}

fn write_log(dir: &Path, log: &[LogRow]) -> Result<(), CliError> {
    csv(&dir.join("train_log.csv"), &LogRow::HEADER, &log.iter().map(LogRow::to_fields).collect::<Vec<_>>())
}

/// Worker threads for embarrassingly parallel work, from [`THREADS_ENV`] (default 1).
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.parse::<usize>().ok().filter(|&t| t > 0).ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(1),
    }
}

/// Summary lines printed on success.
pub type Report = Vec<String>;

pub fn gen_data(cfg: &RunConfig) -> Result<Report, CliError> {
    let d = &cfg.data;
    let mut report = Vec::new();
    for (path, count, salt) in [(&d.train_path, d.train_count, 0u64), (&d.test_path, d.test_count, 1)] {
        let seed = crate::seed::derive_seed(cfg.seed, &[0xDA, salt]);
        let data = match d.kind {
            DataKind::Geometry => gen_geometry_dataset(count, (d.min_nodes, d.max_nodes), &GeometryParams::default(), seed)?,
            DataKind::Tsp => gen_tsp_dataset(count, d.tsp_points, d.tsp_k, seed)?,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        write_dataset(path, &data)?;
        report.push(format!("wrote {} graphs to {}", data.len(), path.display()));
    }
    Ok(report)
}

pub fn train(cfg: &RunConfig) -> Result<Report, CliError> {
    let data = load_data(&cfg.data.train_path)?;
    let seed = cfg.seed;
    let out = &cfg.output_dir;
    let (log, ckpt) = match cfg.train.stage {
        Stage::DistancePretrain | Stage::EdgeClassifier => {
            let mut m = DistanceModel { cfg: cfg.distance_model.clone(), params: init_params(&cfg.distance_model, seed)? };
            let src = source(cfg.train.distance_input);
            let (log, name) = if cfg.train.stage == Stage::DistancePretrain {
                (train_distance_predictor(&mut m, &data, &src, &cfg.optim, seed)?, "distance.ckpt")
            } else {
                (train_edge_classifier(&mut m, &data, &src, &cfg.optim, seed)?, "edge.ckpt")
            };
            save_checkpoint(&m.params, &cfg.checkpoint(name))?;
            (log, name)
        }
        Stage::TaskPretrain | Stage::SingleStage => {
            let mut m = TaskModel { cfg: cfg.task_model.clone(), params: init_params(&cfg.task_model, seed)?, norm: TargetNorm::identity() };
            let (src, name) = match cfg.train.stage {
                Stage::TaskPretrain => (DistanceSource::Noised(cfg.noise), "task.ckpt"),
                _ => (DistanceSource::None, "single.ckpt"),
            };
            let log = train_task_predictor(&mut m, &data, &src, &cfg.optim, seed)?;
            save_task(&m, &cfg.checkpoint(name))?;
            (log, name)
        }
        Stage::TaskFinetune => {
            let distance = DistanceModel { cfg: cfg.distance_model.clone(), params: load_model(&cfg.distance_model, &cfg.checkpoint("distance.ckpt"))? };
            let mut task = load_task(&cfg.task_model, &cfg.checkpoint("task.ckpt"))?;
            let log = finetune_task_predictor(&mut task, &distance, &data, &cfg.optim, seed)?;
            save_task(&task, &cfg.checkpoint("task_finetuned.ckpt"))?;
            (log, "task_finetuned.ckpt")
        }
    };
    write_log(out, &log)?;
    let last = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    Ok(vec![format!("trained {} steps, final loss {last}", log.len()), format!("checkpoint {}", cfg.checkpoint(ckpt).display())])
}

pub fn eval(cfg: &RunConfig) -> Result<Report, CliError> {
    let data = load_data(&cfg.data.test_path)?;
    let seed = cfg.seed;
    let mut rows: Vec<(String, f64)> = Vec::new();
    match cfg.train.stage {
        Stage::DistancePretrain => {
            let m = DistanceModel { cfg: cfg.distance_model.clone(), params: load_model(&cfg.distance_model, &cfg.checkpoint("distance.ckpt"))? };
            rows.push(("distance_ce".into(), eval_distance_ce(&m, &data, &source(cfg.train.distance_input), seed)?));
        }
        Stage::EdgeClassifier => {
            let m = DistanceModel { cfg: cfg.distance_model.clone(), params: load_model(&cfg.distance_model, &cfg.checkpoint("edge.ckpt"))? };
            let (pred, truth) = predict_edges(&m, &data, &source(cfg.train.distance_input), seed)?;
            rows.push(("edge_f1".into(), f1_score(&pred, &truth)));
        }
        Stage::SingleStage => {
            let m = load_task(&cfg.task_model, &cfg.checkpoint("single.ckpt"))?;
            rows.push(("task_mae".into(), eval_task_mae(&m, None, &data, &DistanceSource::None, seed)?));
        }
        Stage::TaskPretrain | Stage::TaskFinetune => {
            let name = if cfg.train.stage == Stage::TaskPretrain { "task.ckpt" } else { "task_finetuned.ckpt" };
            let m = load_task(&cfg.task_model, &cfg.checkpoint(name))?;
            rows.push(("task_mae_exact_distances".into(), eval_task_mae(&m, None, &data, &DistanceSource::Exact, seed)?));
            let dpath = cfg.checkpoint("distance.ckpt");
            if dpath.exists() {
                let d = DistanceModel { cfg: cfg.distance_model.clone(), params: load_model(&cfg.distance_model, &dpath)? };
                rows.push(("task_mae_predicted_distances".into(), eval_task_mae(&m, Some(&d), &data, &DistanceSource::None, seed)?));
            }
        }
    }
    csv(&cfg.output_dir.join("metrics.csv"), &["metric", "value"], &rows.iter().map(|(k, v)| vec![k.clone(), v.to_string()]).collect::<Vec<_>>())?;
    Ok(rows.iter().map(|(k, v)| format!("{k} = {v}")).collect())
}

/// Runs stochastic inference on each graph, spreading graphs over `threads` workers.
/// Per-sample seeds depend only on (seed, graph id, sample index), so the result
/// does not depend on the thread count.
pub fn infer_all(distance: &DistanceModel, task: &TaskModel, data: &[GraphInstance], k: usize, seed: u64, threads: usize) -> Result<Vec<PredictionSampleSet>, CliError> {
    let chunk = data.len().div_ceil(threads.max(1)).max(1);
    let parts: Vec<Result<Vec<PredictionSampleSet>, PipelineError>> = std::thread::scope(|s| {
        let handles: Vec<_> = data
            .chunks(chunk)
            .map(|graphs| s.spawn(move || graphs.iter().map(|g| stochastic_inference(distance, task, g, k, seed)).collect::<Result<Vec<_>, _>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("inference worker panicked")).collect()
    });
    let mut all = Vec::with_capacity(data.len());
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

pub fn infer(cfg: &RunConfig) -> Result<Report, CliError> {
    let data = load_data(&cfg.data.test_path)?;
    let distance = DistanceModel { cfg: cfg.distance_model.clone(), params: load_model(&cfg.distance_model, &cfg.checkpoint("distance.ckpt"))? };
    let finetuned = cfg.checkpoint("task_finetuned.ckpt");
    let task_path = if finetuned.exists() { finetuned } else { cfg.checkpoint("task.ckpt") };
    let task = load_task(&cfg.task_model, &task_path)?;
    let inf = &cfg.infer;
    let sets = infer_all(&distance, &task, &data, inf.samples, cfg.seed, thread_count()?)?;
    let targets: Vec<f64> = data
        .iter()
        .map(|g| g.target_scalar.ok_or_else(|| CliError::Data(format!("graph {} has no target_scalar", g.id))))
        .collect::<Result<_, _>>()?;
    let preds: Vec<f64> = sets.iter().map(|s| s.aggregate(inf.aggregate)).collect();
    let conf: Vec<Option<f64>> = sets.iter().map(|s| s.confidence).collect();
    let norm = normalize_confidence(&conf);
    let opt = |v: Option<f64>| v.map(|c| c.to_string()).unwrap_or_default();
    let rows: Vec<Vec<String>> = data
        .iter()
        .zip(&sets)
        .zip(&targets)
        .zip(&norm)
        .map(|(((g, s), t), n)| vec![g.id.to_string(), t.to_string(), s.mean.to_string(), s.median.to_string(), s.mode.to_string(), opt(s.confidence), opt(*n)])
        .collect();
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    csv(&out.join("predictions.csv"), &["graph_id", "target", "mean", "median", "mode", "confidence", "normalized_confidence"], &rows)?;

    let curve = confidence_curve(&conf, &preds, &targets, &inf.confidence_grid, inf.ewt_threshold);
    let curve_rows: Vec<Vec<String>> = curve.iter().map(|r| vec![r.threshold.to_string(), r.count.to_string(), r.mae.to_string(), r.ewt.to_string()]).collect();
    csv(&out.join("confidence_curve.csv"), &["threshold", "count", "mae", "ewt"], &curve_rows)?;

    let mut k_rows = Vec::new();
    for &k in &inf.sample_counts {
        let mut row = vec![k.to_string()];
        for how in [Aggregate::Mean, Aggregate::Median, Aggregate::Mode] {
            let p: Vec<f64> = sets.iter().map(|s| PredictionSampleSet::from_samples(s.samples[..k].to_vec()).map(|x| x.aggregate(how))).collect::<Result<_, _>>()?;
            row.push(mae(&p, &targets).to_string());
        }
        k_rows.push(row);
    }
    csv(&out.join("sample_curve.csv"), &["k", "mae_mean", "mae_median", "mae_mode"], &k_rows)?;

    let errs: Vec<f64> = preds.iter().zip(&targets).map(|(p, t)| -(p - t).abs()).collect();
    let scored: Vec<(f64, f64)> = conf.iter().zip(&errs).filter_map(|(c, e)| c.map(|c| (c, *e))).collect();
    let rho = if scored.len() > 1 {
        spearman(&scored.iter().map(|x| x.0).collect::<Vec<_>>(), &scored.iter().map(|x| x.1).collect::<Vec<_>>())
    } else {
        f64::NAN
    };
    Ok(vec![format!("MAE ({:?}, K={}) = {}", inf.aggregate, inf.samples, mae(&preds, &targets)), format!("spearman(confidence, -|error|) = {rho}")])
}

pub fn bench(cfg: &RunConfig) -> Result<Report, CliError> {
    let b = &cfg.bench;
    let bc = BenchConfig {
        n_list: b.n_list.clone(),
        node_dim: b.node_dim,
        edge_dim: b.edge_dim,
        heads: b.heads,
        triplet_heads: b.triplet_heads,
        reps: b.reps,
        warmup: b.warmup,
        backward: b.backward,
        seed: cfg.seed,
        ..BenchConfig::default()
    };
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let (mut samples, mut summary, mut report) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &b.interactions {
        let target = match b.level {
            BenchLevel::Layer => BenchTarget::Layer(i),
            BenchLevel::Mechanism => BenchTarget::Mechanism(i),
        };
        let r = bench_mechanism(target, &bc)?;
        for s in &r.samples {
            samples.push(vec![s.mechanism.clone(), s.n.to_string(), s.rep.to_string(), s.time_s.to_string()]);
        }
        for s in &r.summaries {
            summary.push(vec![s.mechanism.clone(), s.n.to_string(), s.reps.to_string(), s.median_s.to_string(), s.mean_s.to_string(), s.std_s.to_string(), r.exponent.to_string()]);
        }
        report.push(format!("{}: exponent {:.3}", target.id(), r.exponent));
    }
    csv(&out.join("bench.csv"), &["mechanism", "N", "rep", "time_s"], &samples)?;
    csv(&out.join("bench_summary.csv"), &["mechanism", "N", "reps", "median_s", "mean_s", "std_s", "exponent"], &summary)?;
    Ok(report)
}

pub fn verify_all(cfg: &RunConfig) -> Result<Report, CliError> {
    let checks = verify::run_all()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let rows: Vec<Vec<String>> = checks.iter().map(|c| vec![c.name.clone(), c.passed.to_string(), c.value.to_string(), c.tolerance.to_string()]).collect();
    csv(&out.join("verify.csv"), &["check", "passed", "value", "tolerance"], &rows)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Verify(format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "))));
    }
    Ok(vec![format!("{} checks passed", checks.len())])
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.output_dir {
        cfg.output_dir = o.clone();
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Report, CliError> {
    match &cli.command {
        Command::GenData(c) => gen_data(&resolve(c)?),
        Command::Train(c) => train(&resolve(c)?),
        Command::Eval(c) => eval(&resolve(c)?),
        Command::Infer(c) => infer(&resolve(c)?),
        Command::Bench(c) => bench(&resolve(c)?),
        Command::Verify(c) => verify_all(&resolve(c)?),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
