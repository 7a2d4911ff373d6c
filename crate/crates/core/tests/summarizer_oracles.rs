use memscore::simulator::brute_force_summary;
use memscore::summarizer::{
    greedy_select, learn_weights, uniform_segments, vid_rep, vid_unif, weighted_value, LearnParams, ProblemFile,
    SelectionOutput, SummaryError, TrainingExample,
};
use memscore::{Budget, ObjectiveKind, Segment, SummaryProblem};
use proptest::prelude::*;
use rand::Rng;

fn problem(mem: Vec<f64>, feats: Vec<Vec<f64>>, budget: Budget, weights: Vec<f64>) -> SummaryProblem {
    let segments = (0..mem.len()).map(|i| Segment::new("v", i, 5.0 * i as f64, 5.0 * (i + 1) as f64)).collect();
    SummaryProblem {
        segments,
        mem_scores: mem,
        segment_features: feats,
        budget,
        weights,
        objectives: ObjectiveKind::ALL.to_vec(),
        sigma_x: None,
        sigma_t: None,
    }
}

/// Every subset as a sorted index list.
fn all_subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..1 << n).map(move |m| (0..n).filter(|i| m >> i & 1 == 1).collect())
}

#[test]
fn representative_singleton_sits_in_larger_cluster() {
    let feats = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0]];
    let best = (0..3)
        .max_by(|&a, &b| vid_rep(&[a], &feats, 1.0).total_cmp(&vid_rep(&[b], &feats, 1.0)).then(b.cmp(&a)))
        .unwrap();
    assert!(best < 2);
    let p = problem(vec![1.0; 3], feats, Budget::Count(1), vec![0.0, 1.0, 0.0]);
    assert!(greedy_select(&p).unwrap()[0] < 2);
}

#[test]
fn uniform_pair_is_evenly_spread() {
    let segs: Vec<Segment> = (0..4).map(|i| Segment::new("v", i, i as f64, i as f64 + 1.0)).collect();
    let sigma = 4.0 / (2.0 * 2.0);
    let pairs: Vec<Vec<usize>> = all_subsets(4).filter(|s| s.len() == 2).collect();
    let best = pairs
        .iter()
        .max_by(|a, b| vid_unif(a, &segs, sigma).total_cmp(&vid_unif(b, &segs, sigma)))
        .unwrap();
    assert!(best == &vec![0, 2] || best == &vec![1, 3], "{best:?}");
}

#[test]
fn brute_force_matches_enumeration_oracle() {
    let mut rng = memscore::rng::seeded(41);
    for _ in 0..50 {
        let n = rng.random_range(3..=9);
        let mem: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let feats: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let l = rng.random_range(1..=n);
        let p = problem(mem, feats, Budget::Count(l), vec![0.5, 0.3, 0.2]);
        let got = weighted_value(&p, &brute_force_summary(&p).unwrap());
        let best = all_subsets(n).filter(|s| s.len() <= l).map(|s| weighted_value(&p, &s)).fold(0.0, f64::max);
        assert!((got - best).abs() < 1e-12);
    }
}

#[test]
fn duration_budget_keeps_half_the_guarantee() {
    let mut rng = memscore::rng::seeded(43);
    let bound = (1.0 - (-1.0f64).exp()) / 2.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=10);
        let mut t = 0.0;
        let segments: Vec<Segment> = (0..n)
            .map(|i| {
                let d = rng.random_range(1.0..8.0);
                t += d;
                Segment::new("v", i, t - d, t)
            })
            .collect();
        let mut p = problem(
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            (0..n).map(|_| vec![rng.random()]).collect(),
            Budget::Duration(rng.random_range(8.0..t.max(9.0))),
            vec![0.4, 0.3, 0.3],
        );
        p.segments = segments;
        let sel = greedy_select(&p).unwrap();
        assert!(p.is_feasible(&sel));
        let opt = weighted_value(&p, &brute_force_summary(&p).unwrap());
        assert!(weighted_value(&p, &sel) >= bound * opt - 1e-12);
    }
}

#[test]
fn duration_budget_below_every_segment_is_infeasible() {
    let p = problem(vec![0.5, 0.7], vec![vec![0.0], vec![1.0]], Budget::Duration(2.0), vec![1.0, 0.0, 0.0]);
    assert!(matches!(greedy_select(&p), Err(SummaryError::InfeasibleBudget { .. })));
}

#[test]
fn single_objective_learns_full_weight() {
    let mut p = problem(vec![0.2, 0.9, 0.4, 0.8], vec![vec![0.0]; 4], Budget::Count(2), vec![1.0]);
    p.objectives = vec![ObjectiveKind::VidMem];
    let ex = TrainingExample { problem: p, references: vec![vec![1, 3]] };
    assert_eq!(learn_weights(&[ex], &LearnParams::default()).unwrap(), vec![1.0]);
}

#[test]
fn uniform_segments_tile_the_video() {
    let segs = uniform_segments("v", 23.0, 5.0);
    assert_eq!(segs.len(), 5);
    assert_eq!(segs.last().unwrap().end_s, 23.0);
    assert!(segs.windows(2).all(|w| w[0].end_s == w[1].start_s));
}

#[test]
fn problem_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("feats.json"),
        r#"{"name":"seg","dim":2,"vectors":{"v:0":[0,0],"v:1":[1,0],"v:2":[0,1]}}"#,
    )
    .unwrap();
    let text = r#"{
        "segments": [
            {"video_id":"v","index":0,"start_s":0,"end_s":5,"timestamp_mid_s":2.5},
            {"video_id":"v","index":1,"start_s":5,"end_s":10,"timestamp_mid_s":7.5},
            {"video_id":"v","index":2,"start_s":10,"end_s":15,"timestamp_mid_s":12.5}
        ],
        "mem_scores": [0.1, 0.9, 0.5],
        "features_ref": "feats.json",
        "budget": {"count": 2},
        "weights": [1, 0, 0]
    }"#;
    let file: ProblemFile = serde_json::from_str(text).unwrap();
    let p = file.into_problem(dir.path()).unwrap();
    let out = SelectionOutput::new(&p, greedy_select(&p).unwrap());
    assert_eq!(out.indices, vec![1, 2]);
    let json = serde_json::to_value(&out).unwrap();
    assert_eq!(json["segments"][0]["start_s"], 5.0);
}

proptest! {
    #[test]
    fn pure_memorability_selects_top_scores(mem in proptest::collection::vec(0.0f64..1.0, 1..30), frac in 0.05f64..1.0) {
        let n = mem.len();
        let l = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let p = problem(mem.clone(), vec![vec![0.0]; n], Budget::Count(l), vec![1.0, 0.0, 0.0]);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| mem[b].total_cmp(&mem[a]).then(a.cmp(&b)));
        let mut want = order[..l].to_vec();
        want.sort_unstable();
        prop_assert_eq!(greedy_select(&p).unwrap(), want);
    }
}
