use std::collections::BTreeMap;

use memscore::model::{Answer, Question, QuestionKind, ResponseRecord};
use memscore::scoring::{
    average_ranks, compute_scores, hit_rate_correlation, participant_precision, spearman, split_half_consistency,
    ScoringConfig,
};
use memscore::simulator::{simulate_study, SimConfig};
use memscore::{ParticipantLog, ProtocolConfig};
use proptest::prelude::*;
use rand::Rng;

fn study(cfg: &SimConfig) -> (memscore::simulator::StudyBundle, memscore::ScoreReport) {
    let b = simulate_study(cfg, &ProtocolConfig::default()).unwrap();
    let r = compute_scores(&b.study.questions, &b.participant_logs().unwrap(), &ScoringConfig::default()).unwrap();
    (b, r)
}

fn planted_rho(b: &memscore::simulator::StudyBundle, r: &memscore::ScoreReport) -> f64 {
    let defined: Vec<_> = r.scores.iter().filter(|s| s.is_defined()).collect();
    let planted: Vec<f64> = defined.iter().map(|s| b.planted[&s.video_id]).collect();
    let got: Vec<f64> = defined.iter().map(|s| s.score).collect();
    spearman(&planted, &got).unwrap()
}

#[test]
fn null_model_has_no_split_half_consistency() {
    // one seed sits near two standard errors, so judge the run as a whole
    let rhos: Vec<f64> = (0..10)
        .map(|seed| {
            let cfg = SimConfig { seed, ..SimConfig::default() }.null_model();
            let (_, r) = study(&cfg);
            split_half_consistency(&r.pairs_by_video, 25, seed).unwrap()
        })
        .collect();
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let inside = rhos.iter().filter(|r| r.abs() < 0.2).count();
    assert!(mean.abs() < 0.1 && inside >= 9, "{rhos:?}");
}

#[test]
fn recovery_improves_with_participants() {
    let rhos: Vec<f64> = [5, 10, 20, 40]
        .iter()
        .map(|&per_video| {
            let mean: f64 = (0..3)
                .map(|seed| {
                    let cfg = SimConfig {
                        n_participants: SimConfig::participants_for(100, per_video, 4),
                        seed,
                        ..SimConfig::default()
                    };
                    let (b, r) = study(&cfg);
                    planted_rho(&b, &r)
                })
                .sum::<f64>()
                / 3.0;
            mean
        })
        .collect();
    assert!(rhos.windows(2).all(|w| w[0] < w[1]), "{rhos:?}");
}

#[test]
fn score_tracks_hit_rate_on_simulated_study() {
    let (_, r) = study(&SimConfig { seed: 31, ..SimConfig::default() });
    let defined: Vec<_> = r.scores.iter().filter(|s| s.is_defined()).cloned().collect();
    assert!(hit_rate_correlation(&defined).unwrap() >= 0.8);
}

#[test]
fn random_responders_are_filtered() {
    let cfg = SimConfig { random_responder_frac: 1.0, seed: 1, ..SimConfig::default() };
    let (_, r) = study(&cfg);
    let share = r.excluded.len() as f64 / (r.excluded.len() + r.participants.len()) as f64;
    assert!(share > 0.6, "{share}");
}

/// Uniform random yes/no over 8 positives and 12 distractors leaves about a
/// quarter of responders at precision 0.5 or above, so this cannot hold.
#[test]
#[ignore = "unattainable: exact filtered share is 0.748"]
fn precision_threshold_filters_95_percent_of_random_responders() {
    let mut round = Vec::new();
    for i in 0..8 {
        let kind = if i < 4 { QuestionKind::TargetPositive } else { QuestionKind::VigilancePositive };
        round.push(Question { id: format!("p{i}"), text: String::new(), kind, source_video_id: Some("v".into()) });
    }
    for i in 0..12 {
        round.push(Question {
            id: format!("d{i}"),
            text: String::new(),
            kind: QuestionKind::Distractor,
            source_video_id: None,
        });
    }
    let mut rng = memscore::rng::seeded(0);
    let filtered = (0..10_000)
        .filter(|_| {
            let recs: Vec<ResponseRecord> = round
                .iter()
                .map(|q| ResponseRecord::new("p", q, if rng.random_bool(0.5) { Answer::Yes } else { Answer::No }, 900))
                .collect();
            participant_precision(&recs).unwrap() < 0.5
        })
        .count();
    assert!(filtered as f64 / 10_000.0 >= 0.95);
}

fn arb_logs() -> impl Strategy<Value = (Vec<Question>, Vec<ParticipantLog>)> {
    let questions: Vec<Question> = (0..6)
        .map(|i| Question {
            id: format!("q{i}"),
            text: String::new(),
            kind: if i < 3 {
                QuestionKind::TargetPositive
            } else if i < 4 {
                QuestionKind::VigilancePositive
            } else {
                QuestionKind::Distractor
            },
            source_video_id: (i < 4).then(|| format!("v{i}")),
        })
        .collect();
    let answer = prop_oneof![Just(Answer::Yes), Just(Answer::No), Just(Answer::Timeout)];
    let round = proptest::collection::vec((answer, 0u64..5000), 6);
    proptest::collection::vec(round, 1..12).prop_map(move |rounds| {
        let logs = rounds
            .into_iter()
            .enumerate()
            .map(|(p, answers)| {
                let pid = format!("p{p:02}");
                let records = questions
                    .iter()
                    .zip(answers)
                    .map(|(q, (a, lat))| ResponseRecord::new(&pid, q, a, lat))
                    .collect();
                ParticipantLog { participant_id: pid, sequence_id: "s".into(), records }
            })
            .collect();
        (questions.clone(), logs)
    })
}

proptest! {
    #[test]
    fn scores_ignore_log_order((questions, logs) in arb_logs(), rot in 0usize..12) {
        let cfg = ScoringConfig::default();
        let mut shuffled = logs.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = compute_scores(&questions, &logs, &cfg);
        let b = compute_scores(&questions, &shuffled, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(format!("{:?}", a.scores), format!("{:?}", b.scores)),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn precision_lies_in_unit_interval((_, logs) in arb_logs()) {
        for log in &logs {
            let p = participant_precision(&log.records).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(
        x in proptest::collection::vec(0u8..6, 3..40),
        y in proptest::collection::vec(0u8..6, 3..40),
    ) {
        let n = x.len().min(y.len());
        let x: Vec<f64> = x[..n].iter().map(|v| *v as f64).collect();
        let y: Vec<f64> = y[..n].iter().map(|v| *v as f64).collect();
        if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&y, &x)) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn average_ranks_sum_to_triangle(v in proptest::collection::vec(-5i32..5, 1..50)) {
        let v: Vec<f64> = v.iter().map(|x| *x as f64).collect();
        let n = v.len() as f64;
        prop_assert!((average_ranks(&v).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }
}

#[test]
fn identical_halves_are_fully_consistent() {
    let mut pairs = BTreeMap::new();
    for v in 0..30 {
        let s = v as f64 / 10.0;
        pairs.insert(format!("v{v:02}"), vec![s, s, s, s]);
    }
    assert!((split_half_consistency(&pairs, 25, 0).unwrap() - 1.0).abs() < 1e-12);
}
