//! Graph instances, hop encoding, synthetic generators and dataset files.

mod geometry;
mod io;
mod tsp;

pub use geometry::{gen_geometry_dataset, gen_geometry_instance, inverse_distance_energy, GeometryParams};
pub use io::{read_dataset, write_dataset};
pub use tsp::{gen_tsp_dataset, gen_tsp_instance, gen_tsp_instance_with, held_karp, tour_length, two_opt, TspInstance, EXACT_TSP_CAP};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hop distances beyond this are clipped (the unreachable bucket is one above).
pub const DEFAULT_MAX_HOPS: usize = 32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("exact TSP labels are limited to {cap} points (got {m}); use heuristic mode for larger instances")]
    ExactOracleCap { m: usize, cap: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
}

/// One graph with its features and (optional) supervision targets.
///
/// Square matrices are stored row-major as flat vectors of length `n * n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphInstance {
    pub id: u64,
    pub n: usize,
    pub node_types: Vec<usize>,
    /// Undirected edges `(i, j, bond_type)` with `i < j`.
    pub edges: Vec<(usize, usize, usize)>,
    pub max_hops: usize,
    pub hops: Vec<usize>,
    #[serde(default)]
    pub coords: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub target_distances: Option<Vec<f64>>,
    #[serde(default)]
    pub target_scalar: Option<f64>,
    #[serde(default)]
    pub edge_labels: Option<Vec<u8>>,
    /// False when edge labels come from a heuristic tour.
    #[serde(default)]
    pub labels_exact: Option<bool>,
}

impl GraphInstance {
    /// Builds an instance from an edge list, computing the hop matrix.
    pub fn from_edges(
        id: u64,
        node_types: Vec<usize>,
        edges: Vec<(usize, usize, usize)>,
        max_hops: usize,
    ) -> Result<Self, GraphError> {
        let n = node_types.len();
        let mut edges: Vec<(usize, usize, usize)> = edges
            .into_iter()
            .map(|(i, j, t)| (i.min(j), i.max(j), t))
            .collect();
        edges.sort_unstable();
        edges.dedup_by_key(|e| (e.0, e.1));
        let pairs: Vec<(usize, usize)> = edges.iter().map(|&(i, j, _)| (i, j)).collect();
        let hops = compute_hops(&pairs, n, max_hops)?;
        Ok(Self {
            id,
            n,
            node_types,
            edges,
            max_hops,
            hops,
            coords: None,
            target_distances: None,
            target_scalar: None,
            edge_labels: None,
            labels_exact: None,
        })
    }

    /// Bond type per ordered pair: 0 for non-edges, `bond_type + 1` for edges.
    pub fn pair_bond_types(&self) -> Vec<usize> {
        let mut out = vec![0; self.n * self.n];
        for &(i, j, t) in &self.edges {
            out[i * self.n + j] = t + 1;
            out[j * self.n + i] = t + 1;
        }
        out
    }

    pub fn adjacency(&self) -> Vec<bool> {
        let mut adj = vec![false; self.n * self.n];
        for &(i, j, _) in &self.edges {
            adj[i * self.n + j] = true;
            adj[j * self.n + i] = true;
        }
        adj
    }

    /// Checks internal consistency of all present fields.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n;
        if self.node_types.len() != n {
            return Err(format!("node_types has {} entries for n = {n}", self.node_types.len()));
        }
        if self.hops.len() != n * n {
            return Err(format!("hops has {} entries, expected {}", self.hops.len(), n * n));
        }
        for &(i, j, _) in &self.edges {
            if i >= n || j >= n || i == j {
                return Err(format!("bad edge ({i}, {j})"));
            }
        }
        if let Some(c) = &self.coords {
            if c.len() != n || c.iter().any(|p| p.len() != c.first().map_or(0, |q| q.len())) {
                return Err("coords must be n rows of equal dimension".into());
            }
        }
        if let Some(d) = &self.target_distances {
            if d.len() != n * n {
                return Err(format!("target_distances has {} entries, expected {}", d.len(), n * n));
            }
        }
        if let Some(l) = &self.edge_labels {
            if l.len() != n * n {
                return Err(format!("edge_labels has {} entries, expected {}", l.len(), n * n));
            }
        }
        Ok(())
    }
}

/// Clipped BFS shortest-path lengths.
///
/// Entries are clipped to `max_hops`; unreachable pairs get `max_hops + 1`.
pub fn compute_hops(edges: &[(usize, usize)], n: usize, max_hops: usize) -> Result<Vec<usize>, GraphError> {
    if max_hops == 0 {
        return Err(GraphError::InvalidParameter("max_hops must be at least 1".into()));
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        for node in [i, j] {
            if node >= n {
                return Err(GraphError::NodeOutOfRange { node, n });
            }
        }
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let unreachable = max_hops + 1;
    let mut hops = vec![unreachable; n * n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        let row = &mut hops[src * n..(src + 1) * n];
        let mut dist = vec![usize::MAX; n];
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (r, d) in row.iter_mut().zip(dist) {
            if d != usize::MAX {
                *r = d.min(max_hops);
            }
        }
    }
    Ok(hops)
}

pub fn pairwise_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclidean(&points[i], &points[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Symmetrized k-nearest-neighbour edge set as `(i, j)` with `i < j`.
pub fn knn_edges(points: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
    let n = points.len();
    let dist = pairwise_distances(points);
    let mut edges = Vec::new();
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist[i * n + a].total_cmp(&dist[i * n + b]).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            edges.push((i.min(j), i.max(j)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}
