use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{knn_edges, pairwise_distances, GraphError, GraphInstance};
use crate::seed::rng_for;

/// Knobs of the synthetic 3D geometry generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryParams {
    pub box_side: f64,
    pub knn: usize,
    pub num_node_types: usize,
    pub num_bond_types: usize,
    /// Points closer than this to an earlier point are resampled.
    pub min_separation: f64,
    /// Edge lengths are bucketed as `floor((len - min_separation) / bond_bucket_width)`, clipped.
    pub bond_bucket_width: f64,
    pub max_hops: usize,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            box_side: 6.0,
            knn: 3,
            num_node_types: 8,
            num_bond_types: 4,
            min_separation: 0.8,
            bond_bucket_width: 0.4,
            max_hops: super::DEFAULT_MAX_HOPS,
        }
    }
}

/// `sum_{i<j} 1 / d_ij` over a symmetric distance matrix.
pub fn inverse_distance_energy(dist: &[f64], n: usize) -> f64 {
    let mut e = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            e += 1.0 / dist[i * n + j];
        }
    }
    e
}

pub fn gen_geometry_instance(id: u64, n: usize, params: &GeometryParams, seed: u64) -> Result<GraphInstance, GraphError> {
    let mut rng = rng_for(seed, &[id]);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while points.len() < n {
        attempts += 1;
        if attempts > 100_000 * n {
            return Err(GraphError::InvalidParameter(format!(
                "cannot place {n} points with separation {} in a box of side {}",
                params.min_separation, params.box_side
            )));
        }
        let p: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * params.box_side).collect();
        let clear = points.iter().all(|q| super::euclidean(&p, q) >= params.min_separation.max(1e-9));
        if clear {
            points.push(p);
        }
    }
    let dist = pairwise_distances(&points);
    let node_types = (0..n).map(|_| rng.gen_range(0..params.num_node_types)).collect();
    let edges = knn_edges(&points, params.knn.min(n.saturating_sub(1)))
        .into_iter()
        .map(|(i, j)| {
            let len = dist[i * n + j];
            let bucket = ((len - params.min_separation) / params.bond_bucket_width).floor().max(0.0) as usize;
            (i, j, bucket.min(params.num_bond_types - 1))
        })
        .collect();
    let mut g = GraphInstance::from_edges(id, node_types, edges, params.max_hops)?;
    g.target_scalar = Some(inverse_distance_energy(&dist, n));
    g.target_distances = Some(dist);
    g.coords = Some(points);
    Ok(g)
}

/// `count` random 3D point clouds with k-NN graphs and exact geometric targets.
///
/// Instance `i` depends only on `(seed, i)` and its size is drawn from the
/// inclusive `n_range`, which must lie within `[4, 24]`.
pub fn gen_geometry_dataset(
    count: usize,
    n_range: (usize, usize),
    params: &GeometryParams,
    seed: u64,
) -> Result<Vec<GraphInstance>, GraphError> {
    let (lo, hi) = n_range;
    if lo < 4 || hi > 24 || lo > hi {
        return Err(GraphError::InvalidParameter(format!("n_range {n_range:?} must satisfy 4 <= lo <= hi <= 24")));
    }
    if params.num_bond_types == 0 || params.num_node_types == 0 {
        return Err(GraphError::InvalidParameter("type counts must be positive".into()));
    }
    (0..count as u64)
        .map(|id| {
            let n = rng_for(seed, &[id, 0x5151]).gen_range(lo..=hi);
            gen_geometry_instance(id, n, params, seed)
        })
        .collect()
}
