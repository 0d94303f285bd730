//! Evaluation metrics and confidence analysis.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub fn mae(preds: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(preds.len(), targets.len());
    if preds.is_empty() {
        return f64::NAN;
    }
    preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64
}

/// Fraction of predictions whose absolute error is at most `tau`.
pub fn ewt(preds: &[f64], targets: &[f64], tau: f64) -> f64 {
    assert_eq!(preds.len(), targets.len());
    if preds.is_empty() {
        return f64::NAN;
    }
    preds.iter().zip(targets).filter(|(p, t)| (*p - *t).abs() <= tau).count() as f64 / preds.len() as f64
}

/// Binary F1 of the positive class, in `[0, 1]`. Defined as 1 when there are
/// neither predicted nor true positives.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let fp = pred.iter().zip(truth).filter(|(p, t)| **p && !**t).count() as f64;
    let fn_ = pred.iter().zip(truth).filter(|(p, t)| !**p && **t).count() as f64;
    if tp + fp + fn_ == 0.0 {
        return 1.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    pearson(&ranks(a), &ranks(b))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Min-max normalization of raw confidences into `[0, 1]`.
///
/// Infinite confidence (identical samples) maps to 1; if all finite values are
/// equal they map to 1 as well. Missing values stay missing.
pub fn normalize_confidence(raw: &[Option<f64>]) -> Vec<Option<f64>> {
    let finite: Vec<f64> = raw.iter().flatten().copied().filter(|c| c.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|c| {
            c.map(|c| {
                if !c.is_finite() || hi <= lo {
                    1.0
                } else {
                    (c - lo) / (hi - lo)
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub threshold: f64,
    pub count: usize,
    pub mae: f64,
    pub ewt: f64,
}

/// Metrics over the examples whose normalized confidence is at least each
/// threshold. Examples without a confidence are never selected.
pub fn confidence_curve(confidence: &[Option<f64>], preds: &[f64], targets: &[f64], grid: &[f64], tau: f64) -> Vec<CurveRow> {
    let norm = normalize_confidence(confidence);
    grid.iter()
        .map(|&t| {
            let keep: Vec<usize> = (0..preds.len()).filter(|&i| norm[i].is_some_and(|c| c >= t)).collect();
            let p: Vec<f64> = keep.iter().map(|&i| preds[i]).collect();
            let y: Vec<f64> = keep.iter().map(|&i| targets[i]).collect();
            CurveRow { threshold: t, count: keep.len(), mae: mae(&p, &y), ewt: ewt(&p, &y, tau) }
        })
        .collect()
}

/// Writes a CSV file with a header row. Floats use Rust's shortest
/// round-trip formatting, so identical values give identical files.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use rand::Rng;

    #[test]
    fn ewt_half() {
        assert_eq!(ewt(&[0.0, 0.03], &[0.0, 0.0], 0.02), 0.5);
    }

    #[test]
    fn perfect_f1() {
        let t = [true, false, true, true, false];
        assert_eq!(f1_score(&t, &t), 1.0);
        assert!((f1_score(&[true, true, false, false, false], &t) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn mae_matches_direct_sum() {
        let mut rng = rng_for(1, &[]);
        let p: Vec<f64> = (0..100).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..100).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut direct = 0.0;
        for i in 0..100 {
            direct += (p[i] - t[i]).abs();
        }
        assert!((mae(&p, &t) - direct / 100.0).abs() < 1e-14);
    }

    #[test]
    fn spearman_monotone_and_ties() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 35.0, 100.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_saturate_confidence() {
        let n = normalize_confidence(&[Some(f64::INFINITY), Some(2.0), Some(4.0), None]);
        assert_eq!(n, vec![Some(1.0), Some(0.0), Some(1.0), None]);
        assert_eq!(normalize_confidence(&[Some(f64::INFINITY); 3]), vec![Some(1.0); 3]);
    }

    #[test]
    fn curve_filters_by_threshold() {
        let conf = [Some(0.0), Some(1.0), Some(0.6), Some(0.2)];
        let preds = [1.0, 2.0, 3.0, 4.0];
        let targets = [0.0, 2.0, 3.5, 4.0];
        let rows = confidence_curve(&conf, &preds, &targets, &[0.0, 0.5], 0.1);
        assert_eq!(rows[0].count, 4);
        assert_eq!(rows[1].count, 2);
        assert!((rows[1].mae - 0.25).abs() < 1e-15);
        assert_eq!(rows[1].ewt, 0.5);
    }
}
