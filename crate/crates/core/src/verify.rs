//! Self-checks runnable from the command line: gradient checks, loop
//! equivalence of the pair interactions, reduction identities, noise limits,
//! binning and the data oracles.

use rand::Rng;
use serde::Serialize;

use crate::encodings::BinSpec;
use crate::graph::{compute_hops, gen_geometry_instance, held_karp, tour_length, GeometryParams};
use crate::layers::{init_interaction, interaction, Dropout, Interaction, Mode};
use crate::model::{forward, init_params, jitter, TgtConfig};
use crate::noising::{smooth_displacements, NoiseConfig};
use crate::seed::rng_for;
use crate::tensor::{grad_check_params, BoundParams, ParamStore, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), passed: value <= tolerance, value, tolerance }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let w = store.get(&format!("{name}.weight")).expect("weight exists");
    let cols = w.shape[1];
    let mut y = store.get(&format!("{name}.bias")).map(|b| b.data.clone()).unwrap_or_else(|_| vec![0.0; cols]);
    for (a, xa) in x.iter().enumerate() {
        for (b, yb) in y.iter_mut().enumerate() {
            *yb += xa * w.data[a * cols + b];
        }
    }
    y
}

type Pairs = Vec<Vec<Vec<f64>>>;

fn project(store: &ParamStore, name: &str, e: &[f64], n: usize, d_e: usize) -> Pairs {
    (0..n).map(|i| (0..n).map(|j| affine(store, name, &e[(i * n + j) * d_e..(i * n + j + 1) * d_e])).collect()).collect()
}

/// Pair update computed with explicit loops over every node triple.
pub fn loop_interaction(store: &ParamStore, name: &str, kind: Interaction, e: &[f64], n: usize, d_e: usize, width: usize) -> Vec<f64> {
    if kind == Interaction::None {
        return vec![0.0; n * n * d_e];
    }
    let mut cat: Pairs = vec![vec![Vec::new(); n]; n];
    for dir in ["in", "out"] {
        let out = dir == "out";
        let pre = format!("{name}.{dir}");
        // (row, col) of the pair read for triple (i, j, k) in this direction
        let at = |m: &Pairs, x: usize, y: usize| -> Vec<f64> { if out { m[y][x].clone() } else { m[x][y].clone() } };
        if kind == Interaction::Triangular {
            let (a, b) = (project(store, &format!("{pre}.left"), e, n, d_e), project(store, &format!("{pre}.right"), e, n, d_e));
            for i in 0..n {
                for j in 0..n {
                    for s in 0..width {
                        cat[i][j].push((0..n).map(|k| at(&a, i, k)[s] * at(&b, j, k)[s]).sum());
                    }
                }
            }
            continue;
        }
        let d = d_e / width;
        let qk = matches!(kind, Interaction::Axial | Interaction::TripletAtt | Interaction::UngatedAtt);
        let gated = matches!(kind, Interaction::TripletAgg | Interaction::TripletAtt);
        let q = qk.then(|| project(store, &format!("{pre}.q"), e, n, d_e));
        let p = qk.then(|| project(store, &format!("{pre}.p"), e, n, d_e));
        let v = project(store, &format!("{pre}.v"), e, n, d_e);
        let b = (kind != Interaction::Axial).then(|| project(store, &format!("{pre}.b"), e, n, d_e));
        let g = gated.then(|| project(store, &format!("{pre}.g"), e, n, d_e));
        for i in 0..n {
            for j in 0..n {
                let mut o = vec![0.0; d_e];
                for h in 0..width {
                    let logits: Vec<f64> = (0..n)
                        .map(|k| {
                            let mut t = 0.0;
                            if let (Some(q), Some(p)) = (&q, &p) {
                                let key = at(p, j, k);
                                t += (0..d).map(|c| q[i][j][h * d + c] * key[h * d + c]).sum::<f64>() / (d as f64).sqrt();
                            }
                            if let Some(b) = &b {
                                t += at(b, i, k)[h];
                            }
                            t
                        })
                        .collect();
                    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|t| (t - mx).exp()).sum();
                    for k in 0..n {
                        let mut a = (logits[k] - mx).exp() / z;
                        if let Some(g) = &g {
                            a *= sigmoid(at(g, i, k)[h]);
                        }
                        let val = at(&v, j, k);
                        for c in 0..d {
                            o[h * d + c] += a * val[h * d + c];
                        }
                    }
                }
                cat[i][j].extend(o);
            }
        }
    }
    cat.iter().flatten().flat_map(|x| affine(store, &format!("{name}.proj"), x)).collect()
}

fn random_store(kind: Interaction, d_e: usize, width: usize, seed: u64) -> ParamStore {
    let mut rng = rng_for(seed, &[0x5E]);
    let mut s = ParamStore::new();
    init_interaction(&mut s, "tri", kind, d_e, width, &mut rng);
    for (_, p) in s.iter_mut() {
        p.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
    }
    s
}

fn random_pairs(n: usize, d_e: usize, seed: u64) -> Tensor {
    let mut rng = rng_for(seed, &[0xE0]);
    Tensor::new((0..n * n * d_e).map(|_| rng.gen_range(-1.5..1.5)).collect(), &[n, n, d_e]).expect("shape matches")
}

fn vectorized(store: &ParamStore, kind: Interaction, e: &Tensor, width: usize) -> Result<Vec<f64>, TensorError> {
    Ok(interaction(&store.bind(false)?, "tri", kind, e, width, &mut Dropout::off())?.update.to_vec())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn overwrite(store: &mut ParamStore, names: &[&str], bias: f64) {
    for name in names {
        if let Ok(w) = store.get_mut(&format!("{name}.weight")) {
            w.data.iter_mut().for_each(|v| *v = 0.0);
        }
        if let Ok(b) = store.get_mut(&format!("{name}.bias")) {
            b.data.iter_mut().for_each(|v| *v = bias);
        }
    }
}

/// Gradient check of a 2-layer model per interaction variant.
pub fn gradient_checks() -> Result<Vec<CheckResult>, TensorError> {
    let mut out = Vec::new();
    for kind in Interaction::ALL {
        let cfg = TgtConfig {
            num_layers: 2,
            node_dim: 16,
            edge_dim: 8,
            heads: 2,
            triplet_heads: if kind == Interaction::None { 0 } else { 2 },
            interaction: kind,
            node_ffn_dim: 16,
            edge_ffn_dim: 16,
            bins: BinSpec::new(8, 8.0).expect("valid bins"),
            ..TgtConfig::default()
        };
        let mut store = init_params(&cfg, 11).map_err(|e| TensorError::InvalidArgument { op: "verify", msg: e.to_string() })?;
        jitter(&mut store, 0.1, &mut rng_for(12, &[]));
        let g = gen_geometry_instance(0, 5, &GeometryParams::default(), 13).map_err(|e| TensorError::InvalidArgument { op: "verify", msg: e.to_string() })?;
        let targets: Vec<usize> = g.target_distances.as_ref().expect("generated").iter().map(|&d| cfg.bins.bin(d)).collect();
        let f = |p: &BoundParams| {
            let o = forward(&cfg, p, &g, None, Mode::DeterministicEval, rng_for(0, &[])).map_err(|e| TensorError::InvalidArgument { op: "forward", msg: e.to_string() })?;
            o.distance_logits.expect("distance head").reshape(&[25, cfg.bins.num_bins])?.cross_entropy(&targets, None)
        };
        let (err, _) = grad_check_params(&f, &store, 1e-5, Some(3))?;
        out.push(CheckResult::at_most(format!("grad_check/{}", kind.name()), err, 1e-4));
    }
    Ok(out)
}

pub fn loop_equivalence(instances: usize) -> Result<Vec<CheckResult>, TensorError> {
    let mut out = Vec::new();
    for kind in [Interaction::TripletAtt, Interaction::TripletAgg, Interaction::Axial, Interaction::Triangular] {
        let mut worst = 0.0f64;
        for s in 0..instances as u64 {
            let mut rng = rng_for(s, &[0x100]);
            let n = rng.gen_range(1..=8);
            let (d_e, width) = if kind == Interaction::Triangular { (4, 3) } else { (6, 2) };
            let store = random_store(kind, d_e, width, s);
            let e = random_pairs(n, d_e, s);
            worst = worst.max(max_diff(&vectorized(&store, kind, &e, width)?, &loop_interaction(&store, "tri", kind, e.data(), n, d_e, width)));
        }
        out.push(CheckResult::at_most(format!("loop_equivalence/{}", kind.name()), worst, 1e-12));
    }
    Ok(out)
}

pub fn reduction_identities() -> Result<Vec<CheckResult>, TensorError> {
    let e = random_pairs(6, 4, 21);
    let base = random_store(Interaction::TripletAtt, 4, 2, 21);

    let mut s = base.clone();
    overwrite(&mut s, &["tri.in.q", "tri.in.p", "tri.out.q", "tri.out.p"], 0.0);
    let a = max_diff(&vectorized(&s, Interaction::TripletAtt, &e, 2)?, &vectorized(&s, Interaction::TripletAgg, &e, 2)?);

    let mut s = base.clone();
    overwrite(&mut s, &["tri.in.b", "tri.out.b"], 0.0);
    overwrite(&mut s, &["tri.in.g", "tri.out.g"], 50.0);
    let b = max_diff(&vectorized(&s, Interaction::TripletAtt, &e, 2)?, &vectorized(&s, Interaction::Axial, &e, 2)?);

    let mut s = base;
    overwrite(&mut s, &["tri.in.g", "tri.out.g"], 50.0);
    let c = max_diff(&vectorized(&s, Interaction::TripletAtt, &e, 2)?, &vectorized(&s, Interaction::UngatedAtt, &e, 2)?);
    Ok(vec![
        CheckResult::at_most("reduction/zero_query_key_is_aggregation", a, 1e-10),
        CheckResult::at_most("reduction/no_bias_saturated_gates_is_axial", b, 1e-10),
        CheckResult::at_most("reduction/saturated_gates_is_ungated", c, 1e-10),
    ])
}

pub fn noise_limits() -> Vec<CheckResult> {
    let mut rng = rng_for(31, &[]);
    let coords: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.gen_range(0.0..6.0)).collect()).collect();
    let sigma = 0.2;
    let rigid = smooth_displacements(&coords, &NoiseConfig { sigma, nu: 1e9 }, &mut rng_for(32, &[]));
    let mut change = 0.0f64;
    for i in 0..12 {
        for j in 0..12 {
            let before: f64 = (0..3).map(|c| (coords[i][c] - coords[j][c]).powi(2)).sum::<f64>().sqrt();
            let after: f64 = (0..3).map(|c| (coords[i][c] + rigid[i][c] - coords[j][c] - rigid[j][c]).powi(2)).sum::<f64>().sqrt();
            change = change.max((before - after).abs());
        }
    }
    let cfg = NoiseConfig { sigma, nu: 1.0 };
    let shifted: Vec<Vec<f64>> = coords.iter().map(|p| p.iter().map(|x| x + 2.5).collect()).collect();
    let d0 = smooth_displacements(&coords, &cfg, &mut rng_for(33, &[]));
    let d1 = smooth_displacements(&shifted, &cfg, &mut rng_for(33, &[]));
    let translation = d0.iter().flatten().zip(d1.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    vec![CheckResult::at_most("noise/rigid_limit", change / sigma, 1e-6), CheckResult::at_most("noise/translation", translation, 1e-12)]
}

pub fn binning(samples: usize) -> Vec<CheckResult> {
    let spec = BinSpec::default();
    let mut rng = rng_for(41, &[]);
    let mut ds: Vec<f64> = (0..samples).map(|_| rng.gen_range(0.0..spec.d_max)).collect();
    let worst = ds.iter().map(|&d| (spec.center(spec.bin(d)) - d).abs()).fold(0.0, f64::max);
    ds.sort_by(f64::total_cmp);
    let monotone = ds.windows(2).all(|w| spec.bin(w[0]) <= spec.bin(w[1]));
    let clipped = spec.bin(spec.d_max) == spec.num_bins - 1 && spec.bin(2.0 * spec.d_max) == spec.num_bins - 1;
    vec![
        CheckResult::at_most("binning/round_trip", worst, spec.d_max / (2.0 * spec.num_bins as f64)),
        CheckResult { name: "binning/monotone_and_clipped".into(), passed: monotone && clipped, value: (monotone && clipped) as u8 as f64, tolerance: 1.0 },
    ]
}

pub fn data_oracles() -> Vec<CheckResult> {
    let mut rng = rng_for(51, &[]);
    let n = 8;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    let hops = compute_hops(&edges, n, 32).expect("valid edges");
    let mut fw = vec![usize::MAX / 4; n * n];
    for i in 0..n {
        fw[i * n + i] = 0;
    }
    for &(i, j) in &edges {
        fw[i * n + j] = 1;
        fw[j * n + i] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                fw[i * n + j] = fw[i * n + j].min(fw[i * n + k] + fw[k * n + j]);
            }
        }
    }
    let hops_ok = (0..n * n).all(|x| hops[x] == if fw[x] > 32 { 33 } else { fw[x] });

    let pts: Vec<[f64; 2]> = (0..7).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let (_, best) = held_karp(&pts).expect("small instance");
    let mut brute = f64::INFINITY;
    let mut perm: Vec<usize> = (1..7).collect();
    permutations(&mut perm, 0, &mut |p| {
        let tour: Vec<usize> = std::iter::once(0).chain(p.iter().copied()).collect();
        brute = brute.min(tour_length(&pts, &tour));
    });
    vec![
        CheckResult { name: "data/hops_floyd_warshall".into(), passed: hops_ok, value: hops_ok as u8 as f64, tolerance: 1.0 },
        CheckResult::at_most("data/held_karp_brute_force", (best - brute).abs(), 1e-9),
    ]
}

fn permutations(xs: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == xs.len() {
        visit(xs);
        return;
    }
    for i in k..xs.len() {
        xs.swap(k, i);
        permutations(xs, k + 1, visit);
        xs.swap(k, i);
    }
}

/// Runs every check.
pub fn run_all() -> Result<Vec<CheckResult>, TensorError> {
    let mut all = gradient_checks()?;
    all.extend(loop_equivalence(50)?);
    all.extend(reduction_identities()?);
    all.extend(noise_limits());
    all.extend(binning(100_000));
    all.extend(data_oracles());
    Ok(all)
}
