use rand::Rng;

use crate::nn::{init_linear, linear};
use crate::tensor::{BoundParams, ParamStore, Result, Tensor, TensorError};

pub fn init_egt_attention(store: &mut ParamStore, name: &str, d_h: usize, d_e: usize, heads: usize, rng: &mut impl Rng) {
    for proj in ["q", "k", "v"] {
        init_linear(store, &format!("{name}.{proj}"), d_h, d_h, true, rng);
    }
    init_linear(store, &format!("{name}.b"), d_e, heads, true, rng);
    init_linear(store, &format!("{name}.g"), d_e, heads, true, rng);
    init_linear(store, &format!("{name}.node_out"), d_h, d_h, true, rng);
    init_linear(store, &format!("{name}.pair_out"), heads, d_e, true, rng);
}

pub struct EgtOutput {
    /// `[N, d_h]`
    pub node_update: Tensor,
    /// `[N, N, d_e]`
    pub pair_update: Tensor,
    /// `s_i` per head, `[H, N, 1]`
    pub centrality: Tensor,
    /// Gated weights `a_ij`, `[H, N, N]`
    pub weights: Tensor,
    /// Head outputs before centrality scaling, `[H, N, d_k]`
    pub head_outputs: Tensor,
}

/// Node/pair multi-head attention with edge bias, sigmoid gating and centrality scalers.
///
/// `t_ij = q_i . k_j / sqrt(d_k) + b_ij`, `a_ij = softmax_j(t_ij) sigma(g_ij)`,
/// `o_i = s_i sum_j a_ij v_j` with `s_i = ln sum_j (1 + sigma(g_ij))`.
/// The pair update projects the unmasked logits `t_ij` of all heads.
/// `source_mask[j] == true` hides node `j` as a key/value for every query and head.
pub fn egt_attention(
    p: &BoundParams,
    name: &str,
    h: &Tensor,
    e: &Tensor,
    heads: usize,
    source_mask: Option<&[bool]>,
) -> Result<EgtOutput> {
    let n = h.shape()[0];
    let d_h = h.shape()[1];
    if e.shape()[..2] != [n, n] || d_h % heads != 0 {
        return Err(TensorError::ShapeMismatch { op: "egt_attention", lhs: h.shape().to_vec(), rhs: e.shape().to_vec() });
    }
    let d_k = d_h / heads;
    let split = |x: Tensor| x.reshape(&[n, heads, d_k])?.permute(&[1, 0, 2]);
    let q = split(linear(p, &format!("{name}.q"), h)?)?;
    let k = split(linear(p, &format!("{name}.k"), h)?)?;
    let v = split(linear(p, &format!("{name}.v"), h)?)?;
    let bias = linear(p, &format!("{name}.b"), e)?.permute(&[2, 0, 1])?;
    let gate = linear(p, &format!("{name}.g"), e)?.permute(&[2, 0, 1])?.sigmoid();

    let logits = q.bmm(&k, false, true)?.scale(1.0 / (d_k as f64).sqrt()).add(&bias)?;
    let masked = match source_mask {
        Some(mask) => {
            if mask.len() != n {
                return Err(TensorError::ShapeMismatch { op: "source_mask", lhs: vec![n], rhs: vec![mask.len()] });
            }
            let full: Vec<bool> = (0..heads * n * n).map(|idx| mask[idx % n]).collect();
            logits.masked_fill(&full, f64::NEG_INFINITY)?
        }
        None => logits.clone(),
    };
    let weights = masked.softmax(2)?.mul(&gate)?;
    let head_outputs = weights.bmm(&v, false, false)?;
    let centrality = gate.add_scalar(1.0).sum_axis(2, true)?.log();
    let scaled = head_outputs.mul(&centrality)?.permute(&[1, 0, 2])?.reshape(&[n, d_h])?;
    let node_update = linear(p, &format!("{name}.node_out"), &scaled)?;
    let pair_update = linear(p, &format!("{name}.pair_out"), &logits.permute(&[1, 2, 0])?)?;
    Ok(EgtOutput { node_update, pair_update, centrality, weights, head_outputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sigmoid;
    use crate::seed::rng_for;

    fn setup(n: usize, d_h: usize, d_e: usize, heads: usize, seed: u64) -> (ParamStore, Tensor, Tensor) {
        let mut rng = rng_for(seed, &[]);
        let mut s = ParamStore::new();
        init_egt_attention(&mut s, "att", d_h, d_e, heads, &mut rng);
        for (_, p) in s.iter_mut() {
            for v in p.data.iter_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
        let h = Tensor::new((0..n * d_h).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[n, d_h]).unwrap();
        let e = Tensor::new((0..n * n * d_e).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[n, n, d_e]).unwrap();
        (s, h, e)
    }

    #[test]
    fn single_node() {
        let (s, h, e) = setup(1, 4, 3, 2, 1);
        let p = s.bind(false).unwrap();
        let out = egt_attention(&p, "att", &h, &e, 2, None).unwrap();
        let g = linear(&p, "att.g", &e).unwrap();
        let v = linear(&p, "att.v", &h).unwrap();
        for head in 0..2 {
            let sg = sigmoid(g.data()[head]);
            assert!((out.weights.data()[head] - sg).abs() < 1e-15);
            assert!((out.centrality.data()[head] - (1.0 + sg).ln()).abs() < 1e-15);
            for c in 0..2 {
                let want = sg * v.data()[head * 2 + c];
                assert!((out.head_outputs.data()[head * 2 + c] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_gates_give_log_one_and_a_half_n() {
        let (mut s, h, e) = setup(6, 4, 3, 2, 2);
        s.get_mut("att.g.weight").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        s.get_mut("att.g.bias").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        let out = egt_attention(&s.bind(false).unwrap(), "att", &h, &e, 2, None).unwrap();
        for &c in out.centrality.data() {
            assert!((c - (1.5f64 * 6.0).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn masked_columns_get_zero_weight() {
        let (s, h, e) = setup(5, 4, 3, 2, 3);
        let mask = [false, true, false, true, false];
        let out = egt_attention(&s.bind(false).unwrap(), "att", &h, &e, 2, Some(&mask)).unwrap();
        for head in 0..2 {
            for i in 0..5 {
                for j in [1, 3] {
                    assert_eq!(out.weights.data()[head * 25 + i * 5 + j], 0.0);
                }
            }
        }
        assert!(out.pair_update.all_finite() && out.node_update.all_finite());
    }

    #[test]
    fn matches_double_loop() {
        let (n, d_h, d_e, heads) = (5, 6, 4, 3);
        let (s, h, e) = setup(n, d_h, d_e, heads, 4);
        let p = s.bind(false).unwrap();
        let out = egt_attention(&p, "att", &h, &e, heads, None).unwrap();
        let d_k = d_h / heads;
        let q = linear(&p, "att.q", &h).unwrap();
        let k = linear(&p, "att.k", &h).unwrap();
        let v = linear(&p, "att.v", &h).unwrap();
        let b = linear(&p, "att.b", &e).unwrap();
        let g = linear(&p, "att.g", &e).unwrap();
        let (q, k, v, b, g) = (q.data(), k.data(), v.data(), b.data(), g.data());
        let mut scaled = vec![0.0; n * d_h];
        for hd in 0..heads {
            for i in 0..n {
                let t: Vec<f64> = (0..n)
                    .map(|j| {
                        let dot: f64 = (0..d_k).map(|c| q[i * d_h + hd * d_k + c] * k[j * d_h + hd * d_k + c]).sum();
                        dot / (d_k as f64).sqrt() + b[(i * n + j) * heads + hd]
                    })
                    .collect();
                let mx = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = t.iter().map(|x| (x - mx).exp()).sum();
                let mut cent = 0.0;
                for j in 0..n {
                    let sg = sigmoid(g[(i * n + j) * heads + hd]);
                    cent += 1.0 + sg;
                    let a = (t[j] - mx).exp() / z * sg;
                    assert!((out.weights.data()[hd * n * n + i * n + j] - a).abs() < 1e-12);
                    for c in 0..d_k {
                        scaled[i * d_h + hd * d_k + c] += a * v[j * d_h + hd * d_k + c];
                    }
                }
                for c in 0..d_k {
                    scaled[i * d_h + hd * d_k + c] *= cent.ln();
                }
            }
        }
        let want = linear(&p, "att.node_out", &Tensor::new(scaled, &[n, d_h]).unwrap()).unwrap();
        for (x, y) in out.node_update.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
