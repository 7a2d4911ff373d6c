//! Summary-quality metrics: max-overlap F-measure against reference
//! selections, and ROUGE-SU over caption text.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Segment;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("at least one reference summary is required")]
    NoReferences,
    #[error("candidate text is empty after preprocessing")]
    EmptyCandidate,
    #[error("segment index {index} out of range ({n} segments)")]
    BadIndex { index: usize, n: usize },
    #[error("invalid interval [{0}, {1})")]
    BadInterval(f64, f64),
    #[error("no caption for segment {0}")]
    MissingCaption(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EvaluationError>;

/// A summary given either as segment indices or as time intervals in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarySelection {
    Segments(Vec<usize>),
    Intervals(Vec<(f64, f64)>),
}

impl SummarySelection {
    /// Time spans covered by the selection. Without a segment list each index
    /// `i` stands for the unit span `[i, i + 1)`.
    pub fn intervals(&self, segments: Option<&[Segment]>) -> Result<Vec<(f64, f64)>> {
        match self {
            SummarySelection::Intervals(v) => {
                for &(a, b) in v {
                    if !(a.is_finite() && b.is_finite() && a <= b) {
                        return Err(EvaluationError::BadInterval(a, b));
                    }
                }
                Ok(v.clone())
            }
            SummarySelection::Segments(idx) => idx
                .iter()
                .map(|&i| match segments {
                    Some(s) => s
                        .get(i)
                        .map(|seg| (seg.start_s, seg.end_s))
                        .ok_or(EvaluationError::BadIndex { index: i, n: s.len() }),
                    None => Ok((i as f64, i as f64 + 1.0)),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub id: String,
    pub selected: SummarySelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapScore {
    pub f_measure: f64,
    pub recall: f64,
    /// Reference that gave the best F-measure.
    pub reference_id: String,
    /// Set when the candidate covers no time at all.
    pub empty_candidate: bool,
}

fn merge(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.retain(|(a, b)| b > a);
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn measure(v: &[(f64, f64)]) -> f64 {
    v.iter().map(|(a, b)| b - a).sum()
}

fn intersection(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

fn f_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }
}

/// Precision and recall of `candidate` against one reference, by covered time.
pub fn overlap_precision_recall(candidate: &[(f64, f64)], reference: &[(f64, f64)]) -> (f64, f64) {
    let c = merge(candidate.to_vec());
    let r = merge(reference.to_vec());
    let inter = intersection(&c, &r);
    let (mc, mr) = (measure(&c), measure(&r));
    let p = if mc > 0.0 { inter / mc } else { 0.0 };
    let rec = if mr > 0.0 { inter / mr } else { 0.0 };
    (p, rec)
}

/// F-measure and recall against the best-matching reference.
pub fn overlap_f_measure(
    candidate: &SummarySelection,
    references: &[ReferenceSummary],
    segments: Option<&[Segment]>,
) -> Result<OverlapScore> {
    if references.is_empty() {
        return Err(EvaluationError::NoReferences);
    }
    let cand = merge(candidate.intervals(segments)?);
    let mut best: Option<OverlapScore> = None;
    for r in references {
        let (p, rec) = overlap_precision_recall(&cand, &r.selected.intervals(segments)?);
        let f = f_score(p, rec);
        if best.as_ref().is_none_or(|b| f > b.f_measure) {
            best = Some(OverlapScore { f_measure: f, recall: rec, reference_id: r.id.clone(), empty_candidate: false });
        }
    }
    let mut best = best.expect("non-empty references");
    best.empty_candidate = measure(&cand) == 0.0;
    Ok(best)
}

const STOPWORDS_V1: &str = include_str!("../data/stopwords_v1.txt");

pub fn stopwords() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_V1
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| "aeiouy".contains(c))
}

/// Small suffix stripper: plurals, then `-ing` / `-ed` with double-consonant repair.
pub fn stem(word: &str) -> String {
    let mut w = word.to_owned();
    if w.len() <= 3 {
        return w;
    }
    if w.ends_with("sses") {
        w.truncate(w.len() - 2);
    } else if w.ends_with("ies") && w.len() > 4 {
        w.truncate(w.len() - 3);
        w.push('y');
    } else if ["xes", "ches", "shes", "zes"].iter().any(|s| w.ends_with(s)) {
        w.truncate(w.len() - 2);
    } else if w.ends_with('s') && !["ss", "us", "is"].iter().any(|s| w.ends_with(s)) {
        w.truncate(w.len() - 1);
    }
    for suffix in ["ing", "ed"] {
        if let Some(base) = w.strip_suffix(suffix) {
            if base.len() >= 3 && has_vowel(base) {
                let mut b = base.to_owned();
                let bytes = b.as_bytes();
                let n = bytes.len();
                if bytes[n - 1] == bytes[n - 2] && !b"aeioulsz".contains(&bytes[n - 1]) {
                    b.pop();
                }
                w = b;
            }
            break;
        }
    }
    w
}

/// Lowercases, splits on non-alphanumerics, drops stopwords and stems.
pub fn preprocess(text: &str) -> Vec<String> {
    let stop = stopwords();
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !stop.contains(t))
        .map(stem)
        .collect()
}

/// Counting unit: a unigram or an ordered skip-bigram.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    Uni(String),
    Bi(String, String),
}

/// Unigrams plus skip-bigrams with at most `skip` tokens between the pair.
pub fn su_units(tokens: &[String], skip: usize) -> HashMap<Unit, usize> {
    let mut out = HashMap::new();
    for (i, t) in tokens.iter().enumerate() {
        *out.entry(Unit::Uni(t.clone())).or_insert(0) += 1;
        for u in tokens.iter().skip(i + 1).take(skip + 1) {
            *out.entry(Unit::Bi(t.clone(), u.clone())).or_insert(0) += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScore {
    /// Best F over the references.
    pub f_measure: f64,
    /// Recall against the best-F reference.
    pub recall: f64,
    pub mean_recall: f64,
}

/// ROUGE-SU of a candidate against reference texts.
pub fn rouge_su(candidate: &str, references: &[&str], skip_distance: usize) -> Result<RougeScore> {
    if references.is_empty() {
        return Err(EvaluationError::NoReferences);
    }
    let cand = su_units(&preprocess(candidate), skip_distance);
    let cand_total: usize = cand.values().sum();
    if cand_total == 0 {
        return Err(EvaluationError::EmptyCandidate);
    }
    let mut best: Option<(f64, f64)> = None;
    let mut recall_sum = 0.0;
    for r in references {
        let units = su_units(&preprocess(r), skip_distance);
        let ref_total: usize = units.values().sum();
        let hit: usize = units.iter().map(|(u, c)| (*c).min(cand.get(u).copied().unwrap_or(0))).sum();
        let rec = if ref_total > 0 { hit as f64 / ref_total as f64 } else { 0.0 };
        let prec = hit as f64 / cand_total as f64;
        let f = f_score(prec, rec);
        recall_sum += rec;
        if best.is_none_or(|(bf, _)| f > bf) {
            best = Some((f, rec));
        }
    }
    let (f_measure, recall) = best.expect("non-empty references");
    Ok(RougeScore { f_measure, recall, mean_recall: recall_sum / references.len() as f64 })
}

/// Captions of the selected segments in temporal (index) order, space separated.
/// An empty selection gives an empty string.
pub fn text_proxy_summary(selection: &[usize], captions: &BTreeMap<usize, String>) -> Result<String> {
    let ordered: BTreeSet<usize> = selection.iter().copied().collect();
    let parts = ordered
        .iter()
        .map(|i| captions.get(i).map(String::as_str).ok_or(EvaluationError::MissingCaption(*i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.join(" "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub method: String,
    pub budget: String,
    pub f_measure: f64,
    pub recall: f64,
}

pub fn write_report_csv<W: Write>(out: W, rows: &[EvaluationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
