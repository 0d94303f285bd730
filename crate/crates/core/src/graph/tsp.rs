use rand::Rng;

use super::{euclidean, knn_edges, pairwise_distances, GraphError, GraphInstance};
use crate::seed::rng_for;

/// Largest instance for which labels come from the exact Held–Karp solver.
pub const EXACT_TSP_CAP: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    pub points: Vec<[f64; 2]>,
    pub k: usize,
    /// Visiting order starting at node 0.
    pub tour: Vec<usize>,
    pub tour_length: f64,
    pub exact: bool,
    pub graph: GraphInstance,
}

pub fn tour_length(points: &[[f64; 2]], tour: &[usize]) -> f64 {
    if tour.len() < 2 {
        return 0.0;
    }
    (0..tour.len())
        .map(|i| euclidean(&points[tour[i]], &points[tour[(i + 1) % tour.len()]]))
        .sum()
}

/// Exact Euclidean TSP by bitmask dynamic programming, `O(2^m m^2)`.
///
/// Returns a tour starting at node 0 and its length.
pub fn held_karp(points: &[[f64; 2]]) -> Result<(Vec<usize>, f64), GraphError> {
    let m = points.len();
    if m > EXACT_TSP_CAP {
        return Err(GraphError::ExactOracleCap { m, cap: EXACT_TSP_CAP });
    }
    if m <= 3 {
        let tour: Vec<usize> = (0..m).collect();
        let len = tour_length(points, &tour);
        return Ok((tour, len));
    }
    let d = |a: usize, b: usize| euclidean(&points[a], &points[b]);
    // Subsets of nodes 1..m encoded on m-1 bits; state (mask, last).
    let rest = m - 1;
    let full = 1usize << rest;
    let mut cost = vec![f64::INFINITY; full * rest];
    let mut parent = vec![usize::MAX; full * rest];
    for j in 0..rest {
        cost[(1 << j) * rest + j] = d(0, j + 1);
    }
    for mask in 1..full {
        for last in 0..rest {
            if mask & (1 << last) == 0 {
                continue;
            }
            let c = cost[mask * rest + last];
            if !c.is_finite() {
                continue;
            }
            for next in 0..rest {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let nm = mask | (1 << next);
                let nc = c + d(last + 1, next + 1);
                if nc < cost[nm * rest + next] {
                    cost[nm * rest + next] = nc;
                    parent[nm * rest + next] = last;
                }
            }
        }
    }
    let all = full - 1;
    let (mut best, mut last) = (f64::INFINITY, 0);
    for j in 0..rest {
        let c = cost[all * rest + j] + d(j + 1, 0);
        if c < best {
            best = c;
            last = j;
        }
    }
    let mut tour = Vec::with_capacity(m);
    let mut mask = all;
    let mut cur = last;
    while cur != usize::MAX {
        tour.push(cur + 1);
        let p = parent[mask * rest + cur];
        mask &= !(1 << cur);
        cur = p;
    }
    tour.push(0);
    tour.reverse();
    Ok((tour, best))
}

/// 2-opt local search from the identity tour; used above the exact cap.
pub fn two_opt(points: &[[f64; 2]]) -> (Vec<usize>, f64) {
    let m = points.len();
    let mut tour: Vec<usize> = (0..m).collect();
    let d = |a: usize, b: usize| euclidean(&points[a], &points[b]);
    let mut improved = m >= 4;
    while improved {
        improved = false;
        for i in 0..m - 1 {
            for j in (i + 2)..m {
                if i == 0 && j == m - 1 {
                    continue;
                }
                let (a, b, c, e) = (tour[i], tour[i + 1], tour[j], tour[(j + 1) % m]);
                if d(a, c) + d(b, e) < d(a, b) + d(c, e) - 1e-12 {
                    tour[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
    }
    let len = tour_length(points, &tour);
    (tour, len)
}

fn build_instance(id: u64, points: Vec<[f64; 2]>, k: usize, tour: Vec<usize>, len: f64, exact: bool, max_hops: usize) -> Result<TspInstance, GraphError> {
    let m = points.len();
    let as_vecs: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    let edges: Vec<(usize, usize, usize)> = knn_edges(&as_vecs, k).into_iter().map(|(i, j)| (i, j, 0)).collect();
    let mut graph = GraphInstance::from_edges(id, vec![0; m], edges, max_hops)?;
    let adj = graph.adjacency();
    let mut labels = vec![0u8; m * m];
    for t in 0..m {
        let (a, b) = (tour[t], tour[(t + 1) % m]);
        if a != b && adj[a * m + b] {
            labels[a * m + b] = 1;
            labels[b * m + a] = 1;
        }
    }
    graph.target_distances = Some(pairwise_distances(&as_vecs));
    graph.coords = Some(as_vecs);
    graph.edge_labels = Some(labels);
    graph.labels_exact = Some(exact);
    Ok(TspInstance { points, k, tour, tour_length: len, exact, graph })
}

/// Random points in the unit square with a k-NN graph labelled by the optimal tour.
pub fn gen_tsp_instance(id: u64, m: usize, k: usize, seed: u64) -> Result<TspInstance, GraphError> {
    gen_tsp_instance_with(id, m, k, seed, false)
}

/// Like [`gen_tsp_instance`]; with `allow_heuristic` instances above the exact
/// cap get 2-opt labels flagged as non-exact instead of an error.
pub fn gen_tsp_instance_with(id: u64, m: usize, k: usize, seed: u64, allow_heuristic: bool) -> Result<TspInstance, GraphError> {
    if m < 3 || k == 0 || k >= m {
        return Err(GraphError::InvalidParameter(format!("need m >= 3 and 0 < k < m (m = {m}, k = {k})")));
    }
    if m > EXACT_TSP_CAP && !allow_heuristic {
        return Err(GraphError::ExactOracleCap { m, cap: EXACT_TSP_CAP });
    }
    let mut rng = rng_for(seed, &[id]);
    let points: Vec<[f64; 2]> = (0..m).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let (tour, len, exact) = if m <= EXACT_TSP_CAP {
        let (t, l) = held_karp(&points)?;
        (t, l, true)
    } else {
        let (t, l) = two_opt(&points);
        (t, l, false)
    };
    build_instance(id, points, k, tour, len, exact, super::DEFAULT_MAX_HOPS)
}

pub fn gen_tsp_dataset(count: usize, m: usize, k: usize, seed: u64) -> Result<Vec<GraphInstance>, GraphError> {
    (0..count as u64).map(|id| gen_tsp_instance(id, m, k, seed).map(|t| t.graph)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn brute_force(points: &[[f64; 2]]) -> f64 {
        fn permute(rest: &mut Vec<usize>, k: usize, points: &[[f64; 2]], best: &mut f64) {
            if k == rest.len() {
                let mut tour = vec![0];
                tour.extend_from_slice(rest);
                *best = best.min(tour_length(points, &tour));
                return;
            }
            for i in k..rest.len() {
                rest.swap(k, i);
                permute(rest, k + 1, points, best);
                rest.swap(k, i);
            }
        }
        let mut rest: Vec<usize> = (1..points.len()).collect();
        let mut best = f64::INFINITY;
        permute(&mut rest, 0, points, &mut best);
        best
    }

    #[test]
    fn unit_square_perimeter() {
        let pts = [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let (tour, len) = held_karp(&pts).unwrap();
        assert!((len - 4.0).abs() < 1e-12);
        assert_eq!(tour[0], 0);
        assert!(tour == vec![0, 2, 1, 3] || tour == vec![0, 3, 1, 2]);
    }

    #[test]
    fn triangle_tour_is_perimeter() {
        let pts = [[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]];
        let (tour, len) = held_karp(&pts).unwrap();
        assert_eq!(tour.len(), 3);
        assert!((len - 12.0).abs() < 1e-12);
    }

    #[test]
    fn eight_points_match_permutation_enumeration() {
        for seed in 0..3 {
            let inst = gen_tsp_instance(0, 8, 3, seed).unwrap();
            let want = brute_force(&inst.points);
            assert!((inst.tour_length - want).abs() < 1e-9, "{} vs {want}", inst.tour_length);
            assert!((tour_length(&inst.points, &inst.tour) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn held_karp_beats_random_tours() {
        let mut rng = rng_for(9, &[]);
        for id in 0..5 {
            let inst = gen_tsp_instance(id, 10, 4, 77).unwrap();
            let mut perm: Vec<usize> = (0..10).collect();
            for _ in 0..100 {
                perm.shuffle(&mut rng);
                assert!(inst.tour_length <= tour_length(&inst.points, &perm) + 1e-12);
            }
        }
    }

    #[test]
    fn labels_are_tour_edges_inside_knn_graph() {
        let inst = gen_tsp_instance(3, 12, 4, 5).unwrap();
        let g = &inst.graph;
        let m = g.n;
        let labels = g.edge_labels.as_ref().unwrap();
        let adj = g.adjacency();
        let mut tour_pairs = std::collections::HashSet::new();
        for t in 0..m {
            let (a, b) = (inst.tour[t], inst.tour[(t + 1) % m]);
            tour_pairs.insert((a.min(b), a.max(b)));
        }
        for i in 0..m {
            for j in 0..m {
                let want = adj[i * m + j] && tour_pairs.contains(&(i.min(j), i.max(j)));
                assert_eq!(labels[i * m + j] == 1, want);
            }
        }
        // each node's k nearest neighbours are present
        let pts: Vec<Vec<f64>> = inst.points.iter().map(|p| p.to_vec()).collect();
        let d = pairwise_distances(&pts);
        for i in 0..m {
            let mut order: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| d[i * m + a].total_cmp(&d[i * m + b]));
            for &j in order.iter().take(4) {
                assert!(adj[i * m + j]);
            }
        }
        assert_eq!(g.labels_exact, Some(true));
    }

    #[test]
    fn exact_cap_is_enforced() {
        assert!(matches!(gen_tsp_instance(0, 17, 4, 1), Err(GraphError::ExactOracleCap { m: 17, cap: 16 })));
        let inst = gen_tsp_instance_with(0, 20, 4, 1, true).unwrap();
        assert!(!inst.exact);
        assert_eq!(inst.graph.labels_exact, Some(false));
        let mut seen = inst.tour.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
    }
}
