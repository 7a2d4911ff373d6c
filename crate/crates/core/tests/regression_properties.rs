use std::collections::BTreeMap;

use memscore::regression::{
    fuse, predict, rmse_protocol, train_forest, variance_reduction, ProtocolOptions, TuningGrid,
};
use memscore::{FeatureChannel, FeatureSubset, ForestConfig, ForestModel};
use proptest::prelude::*;
use rand::Rng;

fn single_tree() -> ForestConfig {
    ForestConfig {
        n_trees: 1,
        max_depth: None,
        min_leaf: 1,
        features_per_split: FeatureSubset::All,
        bootstrap: false,
        seed: 0,
    }
}

fn data(seed: u64, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = memscore::rng::seeded(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| r.random::<f64>()).collect()).collect();
    let y = x.iter().map(|v| v[0] * 2.0 + v[1 % dim] - 0.5 + 0.1 * r.random::<f64>()).collect();
    (x, y)
}

#[test]
fn unpruned_tree_memorizes_distinct_rows() {
    let (x, y) = data(1, 60, 4);
    let m = train_forest(&x, &y, &single_tree(), "c").unwrap();
    for (xi, yi) in x.iter().zip(&y) {
        assert_eq!(predict(&m, xi).unwrap(), *yi);
    }
}

#[test]
fn duplicating_a_row_never_grows_its_residual() {
    for seed in 0..20 {
        let (x, y) = data(seed, 40, 3);
        let cfg = ForestConfig { min_leaf: 3, ..single_tree() };
        let k = seed as usize % x.len();
        let before = (predict(&train_forest(&x, &y, &cfg, "c").unwrap(), &x[k]).unwrap() - y[k]).abs();
        let mut x2 = x.clone();
        let mut y2 = y.clone();
        for _ in 0..3 {
            x2.push(x[k].clone());
            y2.push(y[k]);
        }
        let after = (predict(&train_forest(&x2, &y2, &cfg, "c").unwrap(), &x[k]).unwrap() - y[k]).abs();
        assert!(after <= before + 1e-12, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn leaves_respect_min_leaf() {
    let (x, y) = data(4, 80, 5);
    let cfg = ForestConfig { n_trees: 5, min_leaf: 4, seed: 3, ..ForestConfig::default() };
    let m = train_forest(&x, &y, &cfg, "c").unwrap();
    for t in &m.trees {
        for leaf in t.leaves() {
            assert!(t.n_samples[leaf] >= 4);
        }
        for f in t.split_feature.iter().flatten() {
            assert!(*f < 5);
        }
    }
}

#[test]
fn model_json_keeps_predictions() {
    let (x, y) = data(5, 50, 6);
    let m = train_forest(&x, &y, &ForestConfig { n_trees: 8, seed: 2, ..ForestConfig::default() }, "c").unwrap();
    let back: ForestModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    for xi in &x {
        assert_eq!(predict(&m, xi).unwrap().to_bits(), predict(&back, xi).unwrap().to_bits());
    }
}

#[test]
fn protocol_is_independent_of_thread_count() {
    let (x, y) = data(6, 40, 5);
    let mut ch = FeatureChannel::new("c", 5);
    let mut scores = BTreeMap::new();
    for (i, (xi, yi)) in x.iter().zip(&y).enumerate() {
        ch.insert(&format!("v{i:03}"), xi.clone()).unwrap();
        scores.insert(format!("v{i:03}"), *yi);
    }
    let base = ForestConfig { n_trees: 10, ..ForestConfig::default() };
    let opts = ProtocolOptions {
        train_n: 30,
        repeats: 4,
        grid: TuningGrid { n_trees: vec![10], min_leaf: vec![1, 3], ..TuningGrid::default() },
        base,
        channel_sets: vec![vec!["c".into()]],
        ..ProtocolOptions::default()
    };
    let parallel = rmse_protocol(&[ch.clone()], &scores, &opts).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let sequential = pool.install(|| rmse_protocol(&[ch], &scores, &opts).unwrap());
    assert_eq!(parallel, sequential);
}

proptest! {
    #[test]
    fn fusion_is_monotone(p in proptest::collection::vec(-2.0f64..2.0, 1..6), i in 0usize..6, bump in 0.0f64..1.0) {
        let i = i % p.len();
        let mut q = p.clone();
        q[i] += bump;
        prop_assert!(fuse(&q).unwrap() >= fuse(&p).unwrap() - 1e-15);
    }

    #[test]
    fn variance_reduction_is_non_negative(
        left in proptest::collection::vec(-3.0f64..3.0, 1..20),
        right in proptest::collection::vec(-3.0f64..3.0, 1..20),
    ) {
        prop_assert!(variance_reduction(&left, &right) >= -1e-12);
    }

    #[test]
    fn equal_child_means_give_zero_reduction(v in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
        let mirrored: Vec<f64> = v.iter().rev().copied().collect();
        prop_assert!(variance_reduction(&v, &mirrored).abs() < 1e-9);
    }
}
