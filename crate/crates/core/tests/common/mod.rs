#![allow(dead_code)]

//! Explicit-loop reference implementations used by the integration tests.
//! Nothing here calls into the library's tensor kernels; parameters are read
//! straight out of the store.

use rand::Rng;
use tgt_core::layers::{init_interaction, Interaction};
use tgt_core::seed::rng_for;
use tgt_core::tensor::{ParamStore, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x @ W + b` for one input vector, with `W` stored `[in, out]`.
pub fn affine(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let w = store.get(&format!("{name}.weight")).unwrap();
    let (fan_in, fan_out) = (w.shape[0], w.shape[1]);
    assert_eq!(x.len(), fan_in);
    let mut y = match store.get(&format!("{name}.bias")) {
        Ok(b) => b.data.clone(),
        Err(_) => vec![0.0; fan_out],
    };
    for (a, &xa) in x.iter().enumerate() {
        for (b, yb) in y.iter_mut().enumerate() {
            *yb += xa * w.data[a * fan_out + b];
        }
    }
    y
}

/// Projects every pair vector: result indexed `[i][j][channel]`.
pub fn project_pairs(store: &ParamStore, name: &str, e: &[f64], n: usize, d_e: usize) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|i| (0..n).map(|j| affine(store, name, &e[(i * n + j) * d_e..(i * n + j + 1) * d_e])).collect())
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = xs.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.iter().map(|x| x / z).collect()
}

/// Pair update of `kind` computed with explicit loops over `(i, j, k)`.
pub fn naive_interaction(store: &ParamStore, name: &str, kind: Interaction, e: &[f64], n: usize, d_e: usize, width: usize) -> Vec<f64> {
    if kind == Interaction::None {
        return vec![0.0; n * n * d_e];
    }
    let mut concat: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n]; n];
    for dir in ["in", "out"] {
        let outward = dir == "out";
        let pre = format!("{name}.{dir}");
        if kind == Interaction::Triangular {
            let a = project_pairs(store, &format!("{pre}.left"), e, n, d_e);
            let b = project_pairs(store, &format!("{pre}.right"), e, n, d_e);
            for i in 0..n {
                for j in 0..n {
                    for s in 0..width {
                        let mut acc = 0.0;
                        for k in 0..n {
                            acc += if outward { a[k][i][s] * b[k][j][s] } else { a[i][k][s] * b[j][k][s] };
                        }
                        concat[i][j].push(acc);
                    }
                }
            }
            continue;
        }
        let heads = width;
        let d = d_e / heads;
        let uses_qk = matches!(kind, Interaction::Axial | Interaction::TripletAtt | Interaction::UngatedAtt);
        let uses_bias = !matches!(kind, Interaction::Axial);
        let gated = matches!(kind, Interaction::TripletAgg | Interaction::TripletAtt);
        let q = uses_qk.then(|| project_pairs(store, &format!("{pre}.q"), e, n, d_e));
        let p = uses_qk.then(|| project_pairs(store, &format!("{pre}.p"), e, n, d_e));
        let v = project_pairs(store, &format!("{pre}.v"), e, n, d_e);
        let b = uses_bias.then(|| project_pairs(store, &format!("{pre}.b"), e, n, d_e));
        let g = gated.then(|| project_pairs(store, &format!("{pre}.g"), e, n, d_e));
        for i in 0..n {
            for j in 0..n {
                let mut o = vec![0.0; d_e];
                for h in 0..heads {
                    let logits: Vec<f64> = (0..n)
                        .map(|k| {
                            let mut t = 0.0;
                            if let (Some(q), Some(p)) = (&q, &p) {
                                let key = if outward { &p[k][j] } else { &p[j][k] };
                                let dot: f64 = (0..d).map(|c| q[i][j][h * d + c] * key[h * d + c]).sum();
                                t += dot / (d as f64).sqrt();
                            }
                            if let Some(b) = &b {
                                t += if outward { b[k][i][h] } else { b[i][k][h] };
                            }
                            t
                        })
                        .collect();
                    let sm = softmax(&logits);
                    for k in 0..n {
                        let mut a = sm[k];
                        if let Some(g) = &g {
                            a *= sigmoid(if outward { g[k][i][h] } else { g[i][k][h] });
                        }
                        let val = if outward { &v[k][j] } else { &v[j][k] };
                        for c in 0..d {
                            o[h * d + c] += a * val[h * d + c];
                        }
                    }
                }
                concat[i][j].extend(o);
            }
        }
    }
    let mut out = Vec::with_capacity(n * n * d_e);
    for row in &concat {
        for x in row {
            out.extend(affine(store, &format!("{name}.proj"), x));
        }
    }
    out
}

/// A store for `kind` with non-trivial (perturbed) biases.
pub fn random_interaction_store(kind: Interaction, d_e: usize, width: usize, seed: u64) -> ParamStore {
    let mut rng = rng_for(seed, &[0xA11]);
    let mut s = ParamStore::new();
    init_interaction(&mut s, "tri", kind, d_e, width, &mut rng);
    for (_, prm) in s.iter_mut() {
        prm.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
    }
    s
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_for(seed, &[0xDA7A]);
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.5..1.5)).collect(), shape).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sets every weight of the named linear maps to zero and their biases to `bias`.
pub fn set_affine(store: &mut ParamStore, names: &[&str], bias: f64) {
    for name in names {
        store.get_mut(&format!("{name}.weight")).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(&format!("{name}.bias")).unwrap().data.iter_mut().for_each(|v| *v = bias);
    }
}
