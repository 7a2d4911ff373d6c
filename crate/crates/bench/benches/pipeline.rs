use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use memscore::regression::{predict, train_forest};
use memscore::scoring::spearman;
use memscore::summarizer::greedy_select;
use memscore::{Budget, ForestConfig, ObjectiveKind, Segment, SummaryProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(n: usize, budget: usize, r: &mut ChaCha8Rng) -> SummaryProblem {
    SummaryProblem {
        segments: (0..n).map(|i| Segment::new("v", i, 5.0 * i as f64, 5.0 * (i + 1) as f64)).collect(),
        mem_scores: (0..n).map(|_| r.random()).collect(),
        segment_features: (0..n).map(|_| (0..16).map(|_| r.random()).collect()).collect(),
        budget: Budget::Count(budget),
        weights: vec![0.4, 0.3, 0.3],
        objectives: ObjectiveKind::ALL.to_vec(),
        sigma_x: None,
        sigma_t: None,
    }
}

fn greedy(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("greedy_select");
    for n in [60, 240] {
        let p = problem(n, n / 10, &mut r);
        g.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| b.iter(|| greedy_select(p).unwrap()));
    }
    g.finish();
}

fn forest(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<Vec<f64>> = (0..80).map(|_| (0..100).map(|_| r.random()).collect()).collect();
    let y: Vec<f64> = x.iter().map(|v| v[0] + 0.5 * v[1]).collect();
    let cfg = ForestConfig { n_trees: 100, ..ForestConfig::default() };
    c.bench_function("train_forest_80x100", |b| b.iter(|| train_forest(&x, &y, &cfg, "bench").unwrap()));
    let m = train_forest(&x, &y, &cfg, "bench").unwrap();
    c.bench_function("predict_forest", |b| b.iter(|| predict(&m, &x[0]).unwrap()));
}

fn rank_correlation(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.1 * r.random::<f64>()).collect();
    c.bench_function("spearman_10k", |bch| bch.iter(|| spearman(&a, &b).unwrap()));
}

criterion_group!(benches, greedy, forest, rank_correlation);
criterion_main!(benches);
