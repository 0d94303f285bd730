use tgt_core::bench::{bench_mechanism, measure, BenchConfig, BenchTarget};
use tgt_core::layers::Interaction;

#[test]
fn empty_closure_overhead_is_negligible() {
    let cfg = BenchConfig { n_list: vec![16, 32], reps: 5, ..BenchConfig::default() };
    let r = bench_mechanism(BenchTarget::Mechanism(Interaction::TripletAgg), &cfg).unwrap();
    let smallest = r.summaries.iter().map(|s| s.median_s).fold(f64::INFINITY, f64::min);
    let (empty, _) = measure(|| {}, 5, 1);
    let overhead = tgt_core::bench::median(&empty);
    assert!(overhead < 0.01 * smallest, "overhead {overhead} vs smallest {smallest}");
}

#[test]
fn results_have_enough_positive_repetitions() {
    let cfg = BenchConfig { n_list: vec![4, 8, 16, 32], reps: 2, ..BenchConfig::default() };
    let r = bench_mechanism(BenchTarget::EgtAttention, &cfg).unwrap();
    assert!(r.summaries.iter().all(|s| s.reps >= 5 && s.median_s > 0.0));
    assert!(r.exponent.is_finite());
}

#[test]
fn rejects_empty_sizes() {
    let cfg = BenchConfig { n_list: vec![], ..BenchConfig::default() };
    assert!(bench_mechanism(BenchTarget::EgtAttention, &cfg).is_err());
}
