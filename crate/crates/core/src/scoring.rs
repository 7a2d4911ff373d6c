//! Memorability scores from recall-survey responses, plus the consistency and
//! correlation analyses run on them.
//!
//! For participant `j` and target video `i`, the pair score is the time left
//! in the response window on a correct recall divided by the participant's
//! mean time left over all of their correct recalls (targets and vigilance
//! fillers alike); wrong answers and timeouts score zero. A video's score is
//! the mean pair score over the participants that viewed it and passed the
//! precision filter.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Category, MemorabilityScore, Question, QuestionKind, ResponseRecord, VideoItem};
use crate::rng;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("no response records")]
    EmptyRecords,
    #[error("participant {0} has a correct recall but zero mean time left")]
    ZeroMeanTimeLeft(String),
    #[error("video {0} has no participants")]
    NoParticipants(String),
    #[error("{pairs} pair scores for {n} participants")]
    TooManyPairs { pairs: usize, n: usize },
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations")]
    TooFewObservations,
    #[error("constant input: rank correlation undefined")]
    ConstantInput,
    #[error("fewer than 2 usable participants per video")]
    InsufficientParticipants,
    #[error("unknown video id: {0}")]
    UnknownVideo(String),
    #[error("unknown question id: {0}")]
    UnknownQuestion(String),
    #[error("duplicate participant: {0}")]
    DuplicateParticipant(String),
    #[error("text contains no words")]
    EmptyText,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed scores file: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, ScoringError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantStats {
    pub participant_id: String,
    pub precision: f64,
    /// Mean time left (seconds) over the participant's correct recalls.
    pub mean_time_left_s: f64,
    pub n_correct_recalls: usize,
}

impl ParticipantStats {
    pub fn from_records(records: &[ResponseRecord], window_s: f64) -> Result<Self> {
        let precision = participant_precision(records)?;
        let time_lefts: Vec<f64> = records
            .iter()
            .filter(|r| r.is_correct_recall())
            .map(|r| r.time_left_s(window_s))
            .collect();
        Ok(Self::from_time_lefts(&records[0].participant_id, precision, &time_lefts))
    }

    /// Stats from the time left on each correct recall.
    pub fn from_time_lefts(participant_id: &str, precision: f64, time_lefts: &[f64]) -> Self {
        let mean = if time_lefts.is_empty() {
            0.0
        } else {
            time_lefts.iter().sum::<f64>() / time_lefts.len() as f64
        };
        ParticipantStats {
            participant_id: participant_id.to_owned(),
            precision,
            mean_time_left_s: mean,
            n_correct_recalls: time_lefts.len(),
        }
    }
}

/// Correct "yes" answers over all "yes" answers; 0 when nothing was answered "yes".
pub fn participant_precision(records: &[ResponseRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(ScoringError::EmptyRecords);
    }
    let yes = records.iter().filter(|r| r.answer == crate::model::Answer::Yes).count();
    if yes == 0 {
        return Ok(0.0);
    }
    let hits = records.iter().filter(|r| r.is_correct_recall()).count();
    Ok(hits as f64 / yes as f64)
}

/// Pair score from the time left on this video (`None` for a wrong answer).
pub fn mem_score_from_time_left(time_left_s: Option<f64>, stats: &ParticipantStats) -> Result<f64> {
    match time_left_s {
        None => Ok(0.0),
        Some(_) if stats.mean_time_left_s <= 0.0 => {
            Err(ScoringError::ZeroMeanTimeLeft(stats.participant_id.clone()))
        }
        Some(r) => Ok(r / stats.mean_time_left_s),
    }
}

/// Memorability of one target video for one participant.
pub fn mem_score_pair(record: &ResponseRecord, stats: &ParticipantStats, window_s: f64) -> Result<f64> {
    let time_left = record.is_correct_recall().then(|| record.time_left_s(window_s));
    mem_score_from_time_left(time_left, stats)
}

/// Aggregates pair scores; `n_participants` is the number of filtered viewers.
pub fn mem_score_video(video_id: &str, pairs: &[f64], n_participants: usize) -> Result<MemorabilityScore> {
    if n_participants == 0 {
        return Err(ScoringError::NoParticipants(video_id.to_owned()));
    }
    if pairs.len() > n_participants {
        return Err(ScoringError::TooManyPairs { pairs: pairs.len(), n: n_participants });
    }
    let n = n_participants as f64;
    Ok(MemorabilityScore {
        video_id: video_id.to_owned(),
        score: pairs.iter().sum::<f64>() / n,
        hit_rate: pairs.iter().filter(|p| **p > 0.0).count() as f64 / n,
        n_participants,
    })
}

/// All responses of one participant for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantLog {
    pub participant_id: String,
    pub sequence_id: String,
    pub records: Vec<ResponseRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub window_s: f64,
    /// Participants below this precision are dropped.
    pub precision_threshold: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig { window_s: 5.0, precision_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    /// One entry per target video seen by anyone, sorted by video id.
    pub scores: Vec<MemorabilityScore>,
    pub participants: Vec<ParticipantStats>,
    /// Dropped participants with the reason.
    pub excluded: Vec<(String, String)>,
    /// Pair scores of retained participants, in participant-id order.
    pub pairs_by_video: BTreeMap<String, Vec<f64>>,
}

/// Runs the precision filter and the score aggregation over a set of logs.
///
/// The result does not depend on the order of `logs`.
pub fn compute_scores(questions: &[Question], logs: &[ParticipantLog], config: &ScoringConfig) -> Result<ScoreReport> {
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut sorted: Vec<&ParticipantLog> = logs.iter().collect();
    sorted.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    for w in sorted.windows(2) {
        if w[0].participant_id == w[1].participant_id {
            return Err(ScoringError::DuplicateParticipant(w[0].participant_id.clone()));
        }
    }

    let mut pairs_by_video: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut participants = Vec::new();
    let mut excluded = Vec::new();

    for log in sorted {
        let mut targets = Vec::new();
        for r in &log.records {
            let q = by_id
                .get(r.question_id.as_str())
                .ok_or_else(|| ScoringError::UnknownQuestion(r.question_id.clone()))?;
            if q.kind == QuestionKind::TargetPositive {
                let video = q.source_video_id.clone().unwrap_or_default();
                pairs_by_video.entry(video.clone()).or_default();
                targets.push((video, r));
            }
        }
        if log.records.is_empty() {
            excluded.push((log.participant_id.clone(), "no responses".to_owned()));
            continue;
        }
        let stats = ParticipantStats::from_records(&log.records, config.window_s)?;
        if stats.precision < config.precision_threshold {
            excluded.push((log.participant_id.clone(), format!("precision {:.3}", stats.precision)));
            continue;
        }
        let pairs: Result<Vec<(String, f64)>> = targets
            .into_iter()
            .map(|(v, r)| mem_score_pair(r, &stats, config.window_s).map(|s| (v, s)))
            .collect();
        match pairs {
            Ok(pairs) => {
                for (v, s) in pairs {
                    pairs_by_video.entry(v).or_default().push(s);
                }
                participants.push(stats);
            }
            Err(ScoringError::ZeroMeanTimeLeft(_)) => {
                excluded.push((log.participant_id.clone(), "zero mean time left".to_owned()));
            }
            Err(e) => return Err(e),
        }
    }

    let scores = pairs_by_video
        .iter()
        .map(|(v, pairs)| {
            if pairs.is_empty() {
                Ok(MemorabilityScore::undefined(v))
            } else {
                mem_score_video(v, pairs, pairs.len())
            }
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ScoreReport { scores, participants, excluded, pairs_by_video })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(ScoringError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(ScoringError::TooFewObservations);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ScoringError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation, ties resolved with average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(ScoringError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Mean Spearman correlation between per-video scores of two random halves
/// of each video's participants, over `repeats` random splits.
///
/// Videos with fewer than two participants are skipped; a split whose
/// halves are rank-degenerate is skipped too.
pub fn split_half_consistency(pairs_by_video: &BTreeMap<String, Vec<f64>>, repeats: usize, rng_seed: u64) -> Result<f64> {
    let usable: Vec<&Vec<f64>> = pairs_by_video.values().filter(|p| p.len() >= 2).collect();
    if usable.len() < 2 {
        return Err(ScoringError::InsufficientParticipants);
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for r in 0..repeats {
        let mut rng = rng::derived(rng_seed, r as u64);
        let mut a = Vec::with_capacity(usable.len());
        let mut b = Vec::with_capacity(usable.len());
        for pairs in &usable {
            let mut shuffled = (*pairs).clone();
            shuffled.shuffle(&mut rng);
            let (h1, h2) = shuffled.split_at(shuffled.len() / 2);
            a.push(h1.iter().sum::<f64>() / h1.len() as f64);
            b.push(h2.iter().sum::<f64>() / h2.len() as f64);
        }
        if let Ok(rho) = spearman(&a, &b) {
            total += rho;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(ScoringError::ConstantInput);
    }
    Ok(total / counted as f64)
}

/// Rank correlation between the time-based score and the binary hit rate.
pub fn hit_rate_correlation(scores: &[MemorabilityScore]) -> Result<f64> {
    let defined: Vec<&MemorabilityScore> = scores.iter().filter(|s| s.is_defined()).collect();
    let x: Vec<f64> = defined.iter().map(|s| s.score).collect();
    let y: Vec<f64> = defined.iter().map(|s| s.hit_rate).collect();
    spearman(&x, &y)
}

pub fn category_averages(scores: &[MemorabilityScore], videos: &[VideoItem]) -> Result<BTreeMap<Category, f64>> {
    let cats: HashMap<&str, Category> = videos.iter().map(|v| (v.id.as_str(), v.category)).collect();
    let mut acc: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.is_defined()) {
        let c = cats
            .get(s.video_id.as_str())
            .ok_or_else(|| ScoringError::UnknownVideo(s.video_id.clone()))?;
        let e = acc.entry(*c).or_insert((0.0, 0));
        e.0 += s.score;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(c, (sum, n))| (c, sum / n as f64)).collect())
}

/// Vowel-group syllable count with the silent final `e` removed, at least 1.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).flat_map(char::to_lowercase).collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0usize;
    let mut prev = false;
    for &c in &w {
        let v = is_vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    if w.last() == Some(&'e') {
        groups = groups.saturating_sub(1);
    }
    groups.max(1)
}

/// Flesch-Kincaid grade level: `0.39 * words/sentences + 11.8 * syllables/words - 15.59`.
pub fn flesch_kincaid_grade(text: &str) -> Result<f64> {
    let words: Vec<&str> = text
        .split_whitespace()
        .filter(|t| t.chars().any(char::is_alphabetic))
        .collect();
    if words.is_empty() {
        return Err(ScoringError::EmptyText);
    }
    let mut sentences = 0usize;
    let mut in_terminator = false;
    for c in text.chars() {
        let t = matches!(c, '.' | '!' | '?');
        if t && !in_terminator {
            sentences += 1;
        }
        in_terminator = t;
    }
    let sentences = sentences.max(1) as f64;
    let n_words = words.len() as f64;
    let syllables: usize = words.iter().map(|w| count_syllables(w)).sum();
    Ok(0.39 * (n_words / sentences) + 11.8 * (syllables as f64 / n_words) - 15.59)
}

/// Rank correlation between question readability and the scores of the
/// videos the questions ask about.
pub fn question_complexity_correlation(questions: &[Question], scores: &[MemorabilityScore]) -> Result<f64> {
    let mut grades: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for q in questions.iter().filter(|q| q.kind == QuestionKind::TargetPositive) {
        if let Some(v) = q.source_video_id.as_deref() {
            grades.entry(v).or_default().push(flesch_kincaid_grade(&q.text)?);
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for s in scores.iter().filter(|s| s.is_defined()) {
        if let Some(g) = grades.get(s.video_id.as_str()) {
            x.push(g.iter().sum::<f64>() / g.len() as f64);
            y.push(s.score);
        }
    }
    spearman(&x, &y)
}

/// Writes `video_id,score,hit_rate,n_participants`; undefined scores are empty fields.
pub fn write_scores_csv<W: Write>(out: W, scores: &[MemorabilityScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["video_id", "score", "hit_rate", "n_participants"])?;
    for s in scores {
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        w.write_record([s.video_id.clone(), fmt(s.score), fmt(s.hit_rate), s.n_participants.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<MemorabilityScore>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["video_id", "score", "hit_rate", "n_participants"] {
        return Err(ScoringError::Malformed(format!("unexpected header {headers:?}")));
    }
    let parse = |s: &str| -> Result<f64> {
        if s.is_empty() {
            Ok(f64::NAN)
        } else {
            s.parse().map_err(|_| ScoringError::Malformed(format!("not a number: {s}")))
        }
    };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(MemorabilityScore {
                video_id: rec[0].to_owned(),
                score: parse(&rec[1])?,
                hit_rate: parse(&rec[2])?,
                n_participants: rec[3].parse().map_err(|_| ScoringError::Malformed(rec[3].to_owned()))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Answer;

    fn rec(answer: Answer, correct: bool, latency_ms: u64) -> ResponseRecord {
        ResponseRecord { participant_id: "p".into(), question_id: "q".into(), answer, latency_ms, correct }
    }

    #[test]
    fn precision_random_anchor() {
        // 10 yes answers, 4 of them on positive questions
        let mut r: Vec<_> = (0..4).map(|_| rec(Answer::Yes, true, 1000)).collect();
        r.extend((0..6).map(|_| rec(Answer::Yes, false, 1000)));
        r.extend((0..10).map(|_| rec(Answer::No, true, 1000)));
        assert_eq!(participant_precision(&r).unwrap(), 0.4);
    }

    #[test]
    fn precision_perfect_and_degenerate() {
        let mut r: Vec<_> = (0..8).map(|_| rec(Answer::Yes, true, 500)).collect();
        r.extend((0..12).map(|_| rec(Answer::No, true, 500)));
        assert_eq!(participant_precision(&r).unwrap(), 1.0);
        let none = vec![rec(Answer::No, false, 100), rec(Answer::Timeout, false, 5000)];
        assert_eq!(participant_precision(&none).unwrap(), 0.0);
        assert!(matches!(participant_precision(&[]), Err(ScoringError::EmptyRecords)));
    }

    #[test]
    fn pair_score_hand_computed() {
        // time left 4.0, 2.0, 3.0 s -> mean 3.0
        let r = vec![rec(Answer::Yes, true, 1000), rec(Answer::Yes, true, 3000), rec(Answer::Yes, true, 2000)];
        let stats = ParticipantStats::from_records(&r, 5.0).unwrap();
        assert_eq!(stats.mean_time_left_s, 3.0);
        let s = mem_score_pair(&r[0], &stats, 5.0).unwrap();
        assert!((s - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(mem_score_pair(&rec(Answer::No, false, 900), &stats, 5.0).unwrap(), 0.0);
        assert_eq!(mem_score_pair(&rec(Answer::Timeout, false, 5000), &stats, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn equal_time_left_normalizes_to_one() {
        let r = vec![rec(Answer::Yes, true, 1500); 4];
        let stats = ParticipantStats::from_records(&r, 5.0).unwrap();
        for x in &r {
            assert_eq!(mem_score_pair(x, &stats, 5.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn zero_mean_time_left_is_flagged() {
        let r = vec![rec(Answer::Yes, true, 5000)];
        let stats = ParticipantStats::from_records(&r, 5.0).unwrap();
        assert!(matches!(mem_score_pair(&r[0], &stats, 5.0), Err(ScoringError::ZeroMeanTimeLeft(_))));
    }

    #[test]
    fn video_score_mean_and_hit_rate() {
        let s = mem_score_video("v", &[1.2, 0.8, 0.0, 1.0], 4).unwrap();
        assert!((s.score - 0.75).abs() < 1e-15);
        assert_eq!(s.hit_rate, 0.75);
        let z = mem_score_video("v", &[0.0, 0.0], 2).unwrap();
        assert_eq!((z.score, z.hit_rate), (0.0, 0.0));
        assert_eq!(mem_score_video("v", &[1.5], 1).unwrap().score, 1.5);
        assert!(matches!(mem_score_video("v", &[], 0), Err(ScoringError::NoParticipants(_))));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-12);
        let x = [0.3, 1.0, -2.0, 7.5];
        assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(ScoringError::ConstantInput)));
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(ScoringError::TooFewObservations)));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn split_half_identical_copies() {
        let pairs: BTreeMap<String, Vec<f64>> = (0..10)
            .map(|i| (format!("v{i}"), vec![i as f64 * 0.1, i as f64 * 0.1]))
            .collect();
        assert!((split_half_consistency(&pairs, 25, 3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_half_needs_two_participants() {
        let pairs: BTreeMap<String, Vec<f64>> = (0..10).map(|i| (format!("v{i}"), vec![1.0])).collect();
        assert!(matches!(split_half_consistency(&pairs, 5, 0), Err(ScoringError::InsufficientParticipants)));
    }

    fn score(id: &str, s: f64, h: f64) -> MemorabilityScore {
        MemorabilityScore { video_id: id.into(), score: s, hit_rate: h, n_participants: 10 }
    }

    #[test]
    fn hit_rate_correlation_cases() {
        let s = vec![score("a", 0.2, 0.1), score("b", 0.4, 0.2), score("c", 0.6, 0.3)];
        assert!((hit_rate_correlation(&s).unwrap() - 1.0).abs() < 1e-12);
        let c = vec![score("a", 0.2, 0.5), score("b", 0.4, 0.5)];
        assert!(hit_rate_correlation(&c).is_err());
    }

    #[test]
    fn category_means() {
        let videos: Vec<VideoItem> = ["a", "b", "c"]
            .iter()
            .zip([Category::Animals, Category::Animals, Category::Sports])
            .map(|(id, category)| VideoItem {
                id: id.to_string(),
                role: crate::model::VideoRole::Target,
                category,
                duration_s: 1.0,
                caption: "x".into(),
            })
            .collect();
        let avg = category_averages(&[score("a", 1.2, 0.5), score("b", 1.4, 0.5)], &videos).unwrap();
        assert_eq!(avg.len(), 1);
        assert!((avg[&Category::Animals] - 1.3).abs() < 1e-12);
        assert!(category_averages(&[], &videos).unwrap().is_empty());
        assert!(matches!(category_averages(&[score("zz", 1.0, 1.0)], &videos), Err(ScoringError::UnknownVideo(_))));
    }

    #[test]
    fn flesch_kincaid_example() {
        let g = flesch_kincaid_grade("The cat sat on the mat.").unwrap();
        assert!((g - (-1.45)).abs() < 1e-12, "{g}");
        assert!(matches!(flesch_kincaid_grade(""), Err(ScoringError::EmptyText)));
        // no terminator: one sentence
        assert_eq!(flesch_kincaid_grade("The cat sat on the mat").unwrap(), g);
    }

    #[test]
    fn syllable_rules() {
        assert_eq!(count_syllables("the"), 1);
        assert_eq!(count_syllables("make"), 1);
        assert_eq!(count_syllables("animal"), 3);
        assert_eq!(count_syllables("beautiful"), 3);
        assert_eq!(count_syllables("rhythm"), 1);
        assert_eq!(count_syllables("Sky!"), 1);
    }

    #[test]
    fn csv_round_trip_keeps_undefined() {
        let scores = vec![score("a", 1.25, 0.5), MemorabilityScore::undefined("b")];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &scores).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("video_id,score,hit_rate,n_participants\n"));
        assert!(text.contains("b,,,0"));
        let back = read_scores_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0], scores[0]);
        assert!(!back[1].is_defined());
    }
}
