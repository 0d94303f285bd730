//! Python bindings for `tgt-core`.
//!
//! Configs cross the boundary as TOML strings with the same keys as the
//! `[distance_model]` / `[optim]` sections of a CLI run config.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tgt_core::cli::CliError;
use tgt_core::encodings::BinSpec;
use tgt_core::graph::{self, GeometryParams, GraphInstance};
use tgt_core::layers::Mode;
use tgt_core::model::{self, TgtConfig};
use tgt_core::noising::{self, NoiseConfig};
use tgt_core::pipeline::{self, DistanceModel, DistanceSource, TargetNorm, TaskModel, TrainConfig};
use tgt_core::seed::rng_for;
use tgt_core::tensor::ParamStore;

fn to_py(e: impl Into<CliError>) -> PyErr {
    let e: CliError = e.into();
    match e {
        CliError::Io(_) => PyIOError::new_err(e.to_string()),
        CliError::Config(_) | CliError::Data(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "train" => Ok(Mode::Train),
        "stochastic_eval" => Ok(Mode::StochasticEval),
        "deterministic_eval" => Ok(Mode::DeterministicEval),
        other => Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    }
}

/// One graph with its hop matrix and optional geometry and targets.
#[pyclass(name = "Graph", module = "tgt_py", from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: GraphInstance,
}

#[pymethods]
impl PyGraph {
    /// Builds a graph from `(i, j, bond_type)` edges.
    #[new]
    #[pyo3(signature = (node_types, edges, max_hops = 32, id = 0, coords = None))]
    fn new(node_types: Vec<usize>, edges: Vec<(usize, usize, usize)>, max_hops: usize, id: u64, coords: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let mut inner = GraphInstance::from_edges(id, node_types, edges, max_hops).map_err(to_py)?;
        if let Some(c) = coords {
            if c.len() != inner.n {
                return Err(PyValueError::new_err("one coordinate row per node is required"));
            }
            inner.target_distances = Some(graph::pairwise_distances(&c));
            inner.coords = Some(c);
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: GraphInstance = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(PyValueError::new_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("graph serializes")
    }

    #[getter]
    fn id(&self) -> u64 {
        self.inner.id
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize, usize)> {
        self.inner.edges.clone()
    }

    /// Row-major `n * n` hop matrix.
    #[getter]
    fn hops(&self) -> Vec<usize> {
        self.inner.hops.clone()
    }

    #[getter]
    fn coords(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.coords.clone()
    }

    #[getter]
    fn target_distances(&self) -> Option<Vec<f64>> {
        self.inner.target_distances.clone()
    }

    #[getter]
    fn target_scalar(&self) -> Option<f64> {
        self.inner.target_scalar
    }

    #[getter]
    fn edge_labels(&self) -> Option<Vec<u8>> {
        self.inner.edge_labels.clone()
    }

    fn __repr__(&self) -> String {
        format!("Graph(id={}, n={}, edges={})", self.inner.id, self.inner.n, self.inner.edges.len())
    }
}

fn unwrap_graphs(graphs: Vec<PyGraph>) -> Vec<GraphInstance> {
    graphs.into_iter().map(|g| g.inner).collect()
}

/// Network parameters plus the config that shaped them. Task models also carry
/// the target standardization fitted during training.
#[pyclass(name = "Model", module = "tgt_py", from_py_object)]
#[derive(Clone)]
struct PyModel {
    cfg: TgtConfig,
    params: ParamStore,
    norm: TargetNorm,
}

impl PyModel {
    fn distance_model(&self) -> DistanceModel {
        DistanceModel { cfg: self.cfg.clone(), params: self.params.clone() }
    }

    fn task_model(&self) -> TaskModel {
        TaskModel { cfg: self.cfg.clone(), params: self.params.clone(), norm: self.norm }
    }
}

fn losses(log: Vec<pipeline::LogRow>) -> Vec<f64> {
    log.into_iter().map(|r| r.loss).collect()
}

#[pymethods]
impl PyModel {
    /// `config` is TOML with model keys (e.g. `interaction = "triplet_att"`).
    #[new]
    #[pyo3(signature = (config = "", seed = 0))]
    fn new(config: &str, seed: u64) -> PyResult<Self> {
        let cfg: TgtConfig = parse_toml(config)?;
        let params = model::init_params(&cfg, seed).map_err(to_py)?;
        Ok(Self { cfg, params, norm: TargetNorm::identity() })
    }

    #[staticmethod]
    fn load(config: &str, path: &str) -> PyResult<Self> {
        let cfg: TgtConfig = parse_toml(config)?;
        let params = model::load_checkpoint(&cfg, std::path::Path::new(path)).map_err(to_py)?;
        Ok(Self { cfg, params, norm: TargetNorm::identity() })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save_checkpoint(&self.params, std::path::Path::new(path)).map_err(to_py)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.params.count()
    }

    #[getter]
    fn config(&self) -> String {
        toml::to_string(&self.cfg).expect("config serializes")
    }

    /// Target standardization as `(mean, std)`.
    #[getter]
    fn target_norm(&self) -> (f64, f64) {
        (self.norm.mean, self.norm.std)
    }

    /// Order-independent hash of all parameter values.
    fn digest(&self) -> u64 {
        self.params.digest()
    }

    /// Returns a dict with the enabled heads: `distance_logits` (flat, shape
    /// `[n, n, bins]`), `graph_scalar`, `edge_logits` (flat `[n, n]`).
    #[pyo3(signature = (graph, distances = None, mode = "deterministic_eval", seed = 0))]
    fn forward<'py>(&self, py: Python<'py>, graph: &PyGraph, distances: Option<Vec<f64>>, mode: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let p = self.params.bind(false).map_err(to_py)?;
        let out = tgt_core::tensor::no_grad(|| model::forward(&self.cfg, &p, &graph.inner, distances.as_deref(), parse_mode(mode)?, rng_for(seed, &[])).map_err(to_py))?;
        let d = PyDict::new(py);
        if let Some(t) = out.distance_logits {
            d.set_item("distance_logits", t.to_vec())?;
        }
        if let Some(t) = out.graph_scalar {
            d.set_item("graph_scalar", self.norm.decode(t.item()))?;
        }
        if let Some(t) = out.edge_logits {
            d.set_item("edge_logits", t.to_vec())?;
        }
        Ok(d)
    }

    /// Trains this model as a distance predictor; returns per-step losses.
    #[pyo3(signature = (graphs, optim = "", seed = 0, exact_distance_input = false))]
    fn train_distance(&mut self, graphs: Vec<PyGraph>, optim: &str, seed: u64, exact_distance_input: bool) -> PyResult<Vec<f64>> {
        let tc: TrainConfig = parse_toml(optim)?;
        let mut m = self.distance_model();
        let src = if exact_distance_input { DistanceSource::Exact } else { DistanceSource::None };
        let log = pipeline::train_distance_predictor(&mut m, &unwrap_graphs(graphs), &src, &tc, seed).map_err(to_py)?;
        self.params = m.params;
        Ok(losses(log))
    }

    /// Pretrains this model as a task predictor on distances from noised coordinates.
    #[pyo3(signature = (graphs, optim = "", seed = 0, sigma = 0.2, nu = 1.0))]
    fn train_task(&mut self, graphs: Vec<PyGraph>, optim: &str, seed: u64, sigma: f64, nu: f64) -> PyResult<Vec<f64>> {
        let tc: TrainConfig = parse_toml(optim)?;
        let noise = NoiseConfig { sigma, nu };
        noise.validate().map_err(PyValueError::new_err)?;
        let mut m = self.task_model();
        let log = pipeline::train_task_predictor(&mut m, &unwrap_graphs(graphs), &DistanceSource::Noised(noise), &tc, seed).map_err(to_py)?;
        self.params = m.params;
        self.norm = m.norm;
        Ok(losses(log))
    }

    /// Finetunes this task model on distances sampled from a frozen distance model.
    #[pyo3(signature = (distance_model, graphs, optim = "", seed = 0))]
    fn finetune_task(&mut self, distance_model: &PyModel, graphs: Vec<PyGraph>, optim: &str, seed: u64) -> PyResult<Vec<f64>> {
        let tc: TrainConfig = parse_toml(optim)?;
        let mut m = self.task_model();
        let log = pipeline::finetune_task_predictor(&mut m, &distance_model.distance_model(), &unwrap_graphs(graphs), &tc, seed).map_err(to_py)?;
        self.params = m.params;
        Ok(losses(log))
    }

    #[pyo3(signature = (graphs, seed = 0))]
    fn eval_distance_ce(&self, graphs: Vec<PyGraph>, seed: u64) -> PyResult<f64> {
        pipeline::eval_distance_ce(&self.distance_model(), &unwrap_graphs(graphs), &DistanceSource::None, seed).map_err(to_py)
    }
}

/// `K` stochastic passes; returns samples, mean, median, mode and confidence.
#[pyfunction]
#[pyo3(signature = (distance_model, task_model, graph, k = 20, seed = 0))]
fn stochastic_inference<'py>(py: Python<'py>, distance_model: &PyModel, task_model: &PyModel, graph: &PyGraph, k: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let s = pipeline::stochastic_inference(&distance_model.distance_model(), &task_model.task_model(), &graph.inner, k, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("samples", s.samples)?;
    d.set_item("mean", s.mean)?;
    d.set_item("median", s.median)?;
    d.set_item("mode", s.mode)?;
    d.set_item("confidence", s.confidence)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (count, min_nodes = 8, max_nodes = 16, seed = 0))]
fn gen_geometry_dataset(count: usize, min_nodes: usize, max_nodes: usize, seed: u64) -> PyResult<Vec<PyGraph>> {
    let data = graph::gen_geometry_dataset(count, (min_nodes, max_nodes), &GeometryParams::default(), seed).map_err(to_py)?;
    Ok(data.into_iter().map(|inner| PyGraph { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (count, points = 12, k = 4, seed = 0))]
fn gen_tsp_dataset(count: usize, points: usize, k: usize, seed: u64) -> PyResult<Vec<PyGraph>> {
    let data = graph::gen_tsp_dataset(count, points, k, seed).map_err(to_py)?;
    Ok(data.into_iter().map(|inner| PyGraph { inner }).collect())
}

#[pyfunction]
fn read_dataset(path: &str) -> PyResult<Vec<PyGraph>> {
    Ok(graph::read_dataset(std::path::Path::new(path)).map_err(to_py)?.into_iter().map(|inner| PyGraph { inner }).collect())
}

#[pyfunction]
fn write_dataset(path: &str, graphs: Vec<PyGraph>) -> PyResult<()> {
    graph::write_dataset(std::path::Path::new(path), &unwrap_graphs(graphs)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (edges, n, max_hops = 32))]
fn compute_hops(edges: Vec<(usize, usize)>, n: usize, max_hops: usize) -> PyResult<Vec<usize>> {
    graph::compute_hops(&edges, n, max_hops).map_err(to_py)
}

/// Optimal tour and its length (exact up to the solver's size cap).
#[pyfunction]
fn held_karp(points: Vec<[f64; 2]>) -> PyResult<(Vec<usize>, f64)> {
    graph::held_karp(&points).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (d, num_bins = 256, d_max = 8.0))]
fn bin_index(d: f64, num_bins: usize, d_max: f64) -> PyResult<usize> {
    Ok(BinSpec::new(num_bins, d_max).map_err(PyValueError::new_err)?.bin(d))
}

#[pyfunction]
#[pyo3(signature = (index, num_bins = 256, d_max = 8.0))]
fn bin_center(index: usize, num_bins: usize, d_max: f64) -> PyResult<f64> {
    let spec = BinSpec::new(num_bins, d_max).map_err(PyValueError::new_err)?;
    if index >= num_bins {
        return Err(PyValueError::new_err(format!("bin {index} out of range for {num_bins} bins")));
    }
    Ok(spec.center(index))
}

#[pyfunction]
#[pyo3(signature = (coords, sigma = 0.2, nu = 1.0, seed = 0))]
fn smooth_noise(coords: Vec<Vec<f64>>, sigma: f64, nu: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let cfg = NoiseConfig { sigma, nu };
    cfg.validate().map_err(PyValueError::new_err)?;
    Ok(noising::smooth_noise(&coords, &cfg, &mut rng_for(seed, &[])))
}

/// Runs the built-in checks; returns `(name, passed, value, tolerance)` tuples.
#[pyfunction]
fn verify() -> PyResult<Vec<(String, bool, f64, f64)>> {
    Ok(tgt_core::verify::run_all().map_err(to_py)?.into_iter().map(|c| (c.name, c.passed, c.value, c.tolerance)).collect())
}

/// Runs the command-line front end with `args` (without the program name); returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    tgt_core::cli::main_with_args(std::iter::once("tgt".to_string()).chain(args))
}

#[pymodule]
fn tgt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(stochastic_inference, m)?)?;
    m.add_function(wrap_pyfunction!(gen_geometry_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(gen_tsp_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(compute_hops, m)?)?;
    m.add_function(wrap_pyfunction!(held_karp, m)?)?;
    m.add_function(wrap_pyfunction!(bin_index, m)?)?;
    m.add_function(wrap_pyfunction!(bin_center, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_noise, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
