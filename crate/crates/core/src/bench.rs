//! Wall-clock scaling of the pair-interaction mechanisms and of whole layers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::layers::{egt_attention, init_egt_attention, init_interaction, init_tgt_layer, interaction, tgt_layer, Dropout, Interaction, LayerDims};
use crate::pipeline::metrics::log_log_slope;
use crate::seed::rng_for;
use crate::tensor::{no_grad, ParamStore, Result, Tensor, TensorError};

/// A single timed batch must last at least this long; shorter calls are
/// repeated inside the batch until it does.
pub const MIN_BATCH_SECONDS: f64 = 1e-3;
pub const MIN_REPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "interaction")]
pub enum BenchTarget {
    /// The pair-interaction module alone.
    Mechanism(Interaction),
    /// A full TGT layer with the given interaction.
    Layer(Interaction),
    /// Node/pair attention alone.
    EgtAttention,
}

impl BenchTarget {
    pub fn id(&self) -> String {
        match self {
            BenchTarget::Mechanism(i) => format!("mechanism_{}", i.name()),
            BenchTarget::Layer(i) => format!("layer_{}", i.name()),
            BenchTarget::EgtAttention => "egt_attention".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n_list: Vec<usize>,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub heads: usize,
    pub triplet_heads: usize,
    pub ffn_mult: usize,
    pub reps: usize,
    pub warmup: usize,
    /// Include the backward pass in each timed call.
    pub backward: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_list: vec![32, 64, 128, 256],
            node_dim: 32,
            edge_dim: 16,
            heads: 4,
            triplet_heads: 2,
            ffn_mult: 2,
            reps: MIN_REPS,
            warmup: 1,
            backward: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSample {
    pub mechanism: String,
    pub n: usize,
    pub rep: usize,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub mechanism: String,
    pub n: usize,
    pub reps: usize,
    /// Calls per timed batch.
    pub inner: usize,
    pub median_s: f64,
    pub mean_s: f64,
    pub std_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub samples: Vec<BenchSample>,
    pub summaries: Vec<BenchSummary>,
    /// Log-log slope of median time against `N` over the larger half of `n_list`.
    pub exponent: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Per-call times of `reps` timed batches after `warmup` untimed calls.
/// Returns the times and the number of calls per batch.
pub fn measure<F: FnMut()>(mut f: F, reps: usize, warmup: usize) -> (Vec<f64>, usize) {
    for _ in 0..warmup {
        f();
    }
    let mut inner = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..inner {
            f();
        }
        if t.elapsed().as_secs_f64() >= MIN_BATCH_SECONDS || inner >= 1 << 24 {
            break;
        }
        inner *= 2;
    }
    let times = (0..reps.max(MIN_REPS))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..inner {
                f();
            }
            t.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    (times, inner)
}

fn target_store(target: BenchTarget, cfg: &BenchConfig) -> (ParamStore, LayerDims) {
    let mut rng = rng_for(cfg.seed, &[0xBE]);
    let interaction = match target {
        BenchTarget::Mechanism(i) | BenchTarget::Layer(i) => i,
        BenchTarget::EgtAttention => Interaction::None,
    };
    let width = if interaction == Interaction::Triangular { cfg.edge_dim } else { cfg.triplet_heads };
    let dims = LayerDims {
        d_h: cfg.node_dim,
        d_e: cfg.edge_dim,
        heads: cfg.heads,
        triplet_width: width,
        interaction,
        node_ffn: cfg.ffn_mult * cfg.node_dim,
        edge_ffn: cfg.ffn_mult * cfg.edge_dim,
    };
    let mut s = ParamStore::new();
    match target {
        BenchTarget::Mechanism(i) => init_interaction(&mut s, "b", i, cfg.edge_dim, width, &mut rng),
        BenchTarget::Layer(_) => init_tgt_layer(&mut s, "b", &dims, &mut rng),
        BenchTarget::EgtAttention => init_egt_attention(&mut s, "b", cfg.node_dim, cfg.edge_dim, cfg.heads, &mut rng),
    }
    (s, dims)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = rng_for(seed, &[0x1A]);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).expect("shape matches data")
}

/// Times one forward (optionally forward + backward) call of `target` per `N`.
pub fn bench_mechanism(target: BenchTarget, cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.n_list.is_empty() || cfg.n_list.contains(&0) {
        return Err(TensorError::InvalidArgument { op: "bench", msg: "n_list must hold positive sizes".into() });
    }
    let (store, dims) = target_store(target, cfg);
    let id = target.id();
    let mut samples = Vec::new();
    let mut summaries = Vec::new();
    for &n in &cfg.n_list {
        let h = random(&[n, cfg.node_dim], cfg.seed);
        let e = random(&[n, n, cfg.edge_dim], cfg.seed + 1);
        let p = store.bind(cfg.backward)?;
        let call = || -> Result<Tensor> {
            Ok(match target {
                BenchTarget::Mechanism(i) => interaction(&p, "b", i, &e, dims.triplet_width, &mut Dropout::off())?.update.sum(),
                BenchTarget::Layer(_) => {
                    let (ho, eo) = tgt_layer(&p, "b", &dims, &h, &e, &mut Dropout::off())?;
                    ho.sum().add(&eo.sum())?
                }
                BenchTarget::EgtAttention => {
                    let o = egt_attention(&p, "b", &h, &e, cfg.heads, None)?;
                    o.node_update.sum().add(&o.pair_update.sum())?
                }
            })
        };
        let mut failure = None;
        let (times, inner) = measure(
            || {
                let r = if cfg.backward { call().and_then(|l| l.backward().map(|_| ())) } else { no_grad(|| call().map(|_| ())) };
                if let Err(err) = r {
                    failure.get_or_insert(err);
                }
            },
            cfg.reps,
            cfg.warmup,
        );
        if let Some(err) = failure {
            return Err(err);
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64).sqrt();
        for (rep, &t) in times.iter().enumerate() {
            samples.push(BenchSample { mechanism: id.clone(), n, rep, time_s: t });
        }
        summaries.push(BenchSummary { mechanism: id.clone(), n, reps: times.len(), inner, median_s: median(&times), mean_s: mean, std_s: std });
    }
    Ok(BenchResult { exponent: scaling_exponent(&summaries), samples, summaries })
}

/// Log-log slope of median time over the larger half of the sizes (NaN with fewer than two).
pub fn scaling_exponent(summaries: &[BenchSummary]) -> f64 {
    let mut rows: Vec<&BenchSummary> = summaries.iter().collect();
    rows.sort_by_key(|r| r.n);
    let top = &rows[rows.len() / 2..];
    if top.len() < 2 {
        return f64::NAN;
    }
    let x: Vec<f64> = top.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = top.iter().map(|r| r.median_s).collect();
    log_log_slope(&x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn fast_calls_are_batched() {
        let (times, inner) = measure(|| {}, 5, 0);
        assert_eq!(times.len(), 5);
        assert!(inner > 1);
        assert!(times.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn exponent_uses_upper_half() {
        let rows: Vec<BenchSummary> = [(8, 1.0), (16, 1.0), (32, 1.0), (64, 8.0)]
            .iter()
            .map(|&(n, t)| BenchSummary { mechanism: "x".into(), n, reps: 5, inner: 1, median_s: t, mean_s: t, std_s: 0.0 })
            .collect();
        assert!((scaling_exponent(&rows) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn small_bench_runs() {
        let cfg = BenchConfig { n_list: vec![4, 8], node_dim: 8, edge_dim: 4, heads: 2, triplet_heads: 2, reps: 5, ..BenchConfig::default() };
        for target in [BenchTarget::Mechanism(Interaction::TripletAtt), BenchTarget::Layer(Interaction::None), BenchTarget::EgtAttention] {
            let r = bench_mechanism(target, &cfg).unwrap();
            assert_eq!(r.summaries.len(), 2);
            assert_eq!(r.samples.len(), 10);
            assert!(r.summaries.iter().all(|s| s.median_s > 0.0));
        }
        let back = BenchConfig { backward: true, ..cfg };
        assert!(bench_mechanism(BenchTarget::Mechanism(Interaction::Triangular), &back).is_ok());
    }
}
