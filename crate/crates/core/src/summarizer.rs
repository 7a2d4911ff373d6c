//! Budgeted video summarization as weighted submodular maximization.
//!
//! Three objectives score a set of selected segments, each normalized so
//! that selecting every segment scores 1:
//!
//! * `VidMem` sums the predicted memorability of the selected segments.
//! * `VidRep` is a facility-location function over segment features with a
//!   Gaussian kernel of bandwidth `sigma_x`.
//! * `VidUnif` is the same construction over segment mid-times with
//!   bandwidth `sigma_t`.
//!
//! All three are monotone submodular, so a lazy greedy gives the usual
//! `1 - 1/e` guarantee under a segment-count budget. Duration budgets use
//! cost-ratio greedy and keep the better of that and the best single segment.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{load_channel, FeatureError};
use crate::model::Segment;
use crate::rng;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("{what}: expected {want} entries, got {got}")]
    LengthMismatch { what: &'static str, want: usize, got: usize },
    #[error("weights must be non-negative and not all zero")]
    InvalidWeights,
    #[error("budget must be positive")]
    InvalidBudget,
    #[error("duration budget {budget_s}s is shorter than every segment")]
    InfeasibleBudget { budget_s: f64 },
    #[error("segment index {0} out of range")]
    BadIndex(usize),
    #[error("{0} segments is too many for exhaustive search")]
    TooLarge(usize),
    #[error("no training examples")]
    NoTraining,
    #[error("reference selection exceeds the budget of its problem")]
    ReferenceOverBudget,
    #[error("training problems use different objective sets")]
    ObjectiveMismatch,
    #[error("weight learning diverged")]
    Diverged,
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("segment {0} has no feature vector")]
    MissingFeatures(String),
}

pub type Result<T> = std::result::Result<T, SummaryError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectiveKind {
    VidMem,
    VidRep,
    VidUnif,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [ObjectiveKind::VidMem, ObjectiveKind::VidRep, ObjectiveKind::VidUnif];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// At most this many segments.
    Count(usize),
    /// Total selected duration at most this many seconds.
    #[serde(rename = "duration_s")]
    Duration(f64),
}

impl Budget {
    /// Budget of `fraction` of the segments (at least one).
    pub fn fraction_of(n_segments: usize, fraction: f64) -> Budget {
        Budget::Count(((n_segments as f64 * fraction).round() as usize).max(1))
    }
}

fn all_objectives() -> Vec<ObjectiveKind> {
    ObjectiveKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryProblem {
    pub segments: Vec<Segment>,
    /// Predicted memorability per segment.
    pub mem_scores: Vec<f64>,
    /// Feature vector per segment, used by `VidRep`.
    pub segment_features: Vec<Vec<f64>>,
    pub budget: Budget,
    /// One weight per entry of `objectives`.
    pub weights: Vec<f64>,
    #[serde(default = "all_objectives")]
    pub objectives: Vec<ObjectiveKind>,
    #[serde(default)]
    pub sigma_x: Option<f64>,
    #[serde(default)]
    pub sigma_t: Option<f64>,
}

impl SummaryProblem {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.segments.len();
        if self.mem_scores.len() != n {
            return Err(SummaryError::LengthMismatch { what: "mem_scores", want: n, got: self.mem_scores.len() });
        }
        if self.segment_features.len() != n {
            return Err(SummaryError::LengthMismatch { what: "segment_features", want: n, got: self.segment_features.len() });
        }
        if self.weights.len() != self.objectives.len() {
            return Err(SummaryError::LengthMismatch { what: "weights", want: self.objectives.len(), got: self.weights.len() });
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().all(|w| *w == 0.0) {
            return Err(SummaryError::InvalidWeights);
        }
        match self.budget {
            Budget::Count(0) => Err(SummaryError::InvalidBudget),
            Budget::Duration(t) if !(t > 0.0) => Err(SummaryError::InvalidBudget),
            _ => Ok(()),
        }
    }

    /// Rough number of segments the budget admits.
    pub fn expected_count(&self) -> usize {
        match self.budget {
            Budget::Count(l) => l.max(1),
            Budget::Duration(t) => {
                let total: f64 = self.segments.iter().map(Segment::duration_s).sum();
                let mean = total / self.segments.len().max(1) as f64;
                if mean > 0.0 { ((t / mean).round() as usize).max(1) } else { 1 }
            }
        }
    }

    /// Feature bandwidth: explicit, else the median pairwise feature distance.
    pub fn resolved_sigma_x(&self) -> f64 {
        self.sigma_x.unwrap_or_else(|| median_pairwise_distance(&self.segment_features))
    }

    /// Temporal bandwidth: explicit, else video duration / (2 L).
    pub fn resolved_sigma_t(&self) -> f64 {
        self.sigma_t.unwrap_or_else(|| {
            let start = self.segments.iter().map(|s| s.start_s).fold(f64::INFINITY, f64::min);
            let end = self.segments.iter().map(|s| s.end_s).fold(f64::NEG_INFINITY, f64::max);
            let dur = end - start;
            if dur.is_finite() && dur > 0.0 { dur / (2.0 * self.expected_count() as f64) } else { 1.0 }
        })
    }

    pub fn cost(&self, i: usize) -> f64 {
        match self.budget {
            Budget::Count(_) => 1.0,
            Budget::Duration(_) => self.segments[i].duration_s(),
        }
    }

    pub fn is_feasible(&self, selection: &[usize]) -> bool {
        match self.budget {
            Budget::Count(l) => selection.len() <= l,
            Budget::Duration(t) => selection.iter().map(|&i| self.segments[i].duration_s()).sum::<f64>() <= t,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn median_pairwise_distance(features: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            d.push(sq_dist(&features[i], &features[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = if d.len() % 2 == 1 { d[d.len() / 2] } else { 0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2]) };
    if m > 0.0 { m } else { 1.0 }
}

/// Normalized sum of memorability over the selection.
pub fn vid_mem(selection: &[usize], mem_scores: &[f64]) -> f64 {
    let total: f64 = mem_scores.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    selection.iter().map(|&i| mem_scores[i]).sum::<f64>() / total
}

fn facility_location(selection: &[usize], n: usize, sim: impl Fn(usize, usize) -> f64) -> f64 {
    if selection.is_empty() || n == 0 {
        return 0.0;
    }
    let covered: f64 = (0..n)
        .map(|i| selection.iter().map(|&j| sim(i, j)).fold(0.0, f64::max))
        .sum();
    // every point covers itself with similarity 1
    covered / n as f64
}

/// Facility-location representativeness over segment features.
pub fn vid_rep(selection: &[usize], features: &[Vec<f64>], sigma_x: f64) -> f64 {
    let denom = 2.0 * sigma_x * sigma_x;
    facility_location(selection, features.len(), |i, j| (-sq_dist(&features[i], &features[j]) / denom).exp())
}

/// Facility-location temporal coverage over segment mid-times.
pub fn vid_unif(selection: &[usize], segments: &[Segment], sigma_t: f64) -> f64 {
    let denom = 2.0 * sigma_t * sigma_t;
    facility_location(selection, segments.len(), |i, j| {
        let d = segments[i].timestamp_mid_s - segments[j].timestamp_mid_s;
        (-d * d / denom).exp()
    })
}

/// Direct evaluation of each objective of `problem` on `selection`.
pub fn objective_values(problem: &SummaryProblem, selection: &[usize]) -> Vec<f64> {
    problem
        .objectives
        .iter()
        .map(|k| match k {
            ObjectiveKind::VidMem => vid_mem(selection, &problem.mem_scores),
            ObjectiveKind::VidRep => vid_rep(selection, &problem.segment_features, problem.resolved_sigma_x()),
            ObjectiveKind::VidUnif => vid_unif(selection, &problem.segments, problem.resolved_sigma_t()),
        })
        .collect()
}

pub fn weighted_value(problem: &SummaryProblem, selection: &[usize]) -> f64 {
    objective_values(problem, selection).iter().zip(&problem.weights).map(|(f, w)| f * w).sum()
}

enum Component {
    Modular(Vec<f64>),
    /// Row-major similarity matrix and the current best coverage per point.
    Facility { sim: Vec<f64>, n: usize },
}

/// Precomputed objectives of a problem with incremental marginal gains.
pub struct ObjectiveSet {
    components: Vec<Component>,
    n: usize,
}

impl ObjectiveSet {
    pub fn new(problem: &SummaryProblem) -> Self {
        let n = problem.len();
        let components = problem
            .objectives
            .iter()
            .map(|k| match k {
                ObjectiveKind::VidMem => {
                    let total: f64 = problem.mem_scores.iter().sum();
                    let scale = if total > 0.0 { 1.0 / total } else { 0.0 };
                    Component::Modular(problem.mem_scores.iter().map(|m| m * scale).collect())
                }
                ObjectiveKind::VidRep => {
                    let denom = 2.0 * problem.resolved_sigma_x().powi(2);
                    let f = &problem.segment_features;
                    Component::Facility { sim: kernel(n, |i, j| (-sq_dist(&f[i], &f[j]) / denom).exp()), n }
                }
                ObjectiveKind::VidUnif => {
                    let denom = 2.0 * problem.resolved_sigma_t().powi(2);
                    let s = &problem.segments;
                    Component::Facility {
                        sim: kernel(n, |i, j| {
                            let d = s[i].timestamp_mid_s - s[j].timestamp_mid_s;
                            (-d * d / denom).exp()
                        }),
                        n,
                    }
                }
            })
            .collect();
        ObjectiveSet { components, n }
    }

    pub fn n_objectives(&self) -> usize {
        self.components.len()
    }

    /// Incremental state with nothing selected.
    pub fn state(&self) -> SelectionState<'_> {
        SelectionState {
            set: self,
            coverage: self
                .components
                .iter()
                .map(|c| match c {
                    Component::Modular(_) => Vec::new(),
                    Component::Facility { n, .. } => vec![0.0; *n],
                })
                .collect(),
            selected: Vec::new(),
        }
    }
}

fn kernel(n: usize, k: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = k(i, j);
        }
    }
    m
}

pub struct SelectionState<'a> {
    set: &'a ObjectiveSet,
    coverage: Vec<Vec<f64>>,
    pub selected: Vec<usize>,
}

impl SelectionState<'_> {
    /// Marginal gain of adding `j`, per objective.
    pub fn gains(&self, j: usize) -> Vec<f64> {
        self.set
            .components
            .iter()
            .zip(&self.coverage)
            .map(|(c, cov)| match c {
                Component::Modular(v) => v[j],
                Component::Facility { sim, n } => {
                    let mut g = 0.0;
                    for i in 0..*n {
                        let s = sim[i * n + j];
                        if s > cov[i] {
                            g += s - cov[i];
                        }
                    }
                    g / *n as f64
                }
            })
            .collect()
    }

    pub fn add(&mut self, j: usize) {
        for (c, cov) in self.set.components.iter().zip(self.coverage.iter_mut()) {
            if let Component::Facility { sim, n } = c {
                for i in 0..*n {
                    cov[i] = cov[i].max(sim[i * n + j]);
                }
            }
        }
        self.selected.push(j);
    }

    /// Current objective values.
    pub fn values(&self) -> Vec<f64> {
        self.set
            .components
            .iter()
            .zip(&self.coverage)
            .map(|(c, cov)| match c {
                Component::Modular(v) => self.selected.iter().map(|&j| v[j]).sum(),
                Component::Facility { n, .. } => cov.iter().sum::<f64>() / *n as f64,
            })
            .collect()
    }
}

/// Weighted marginal-gain oracle driven by the greedy routines.
pub trait GainOracle {
    fn len(&self) -> usize;
    fn gain(&self, j: usize) -> f64;
    fn add(&mut self, j: usize);
}

struct Weighted<'a> {
    state: SelectionState<'a>,
    weights: &'a [f64],
    /// Extra modular term (loss augmentation during learning).
    offset: Option<&'a [f64]>,
}

impl GainOracle for Weighted<'_> {
    fn len(&self) -> usize {
        self.state.set.n
    }

    fn gain(&self, j: usize) -> f64 {
        let g: f64 = self.state.gains(j).iter().zip(self.weights).map(|(g, w)| g * w).sum();
        g + self.offset.map_or(0.0, |o| o[j])
    }

    fn add(&mut self, j: usize) {
        self.state.add(j);
    }
}

#[derive(PartialEq)]
struct Entry {
    bound: f64,
    index: usize,
    stamp: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on bound, lowest index first among equals
        self.bound.total_cmp(&other.bound).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Plain greedy: `limit` times, add the element with the largest gain.
pub fn naive_greedy<O: GainOracle>(oracle: &mut O, limit: usize) -> Vec<usize> {
    let mut chosen = vec![false; oracle.len()];
    let mut out = Vec::new();
    while out.len() < limit {
        let mut best: Option<(f64, usize)> = None;
        for j in (0..oracle.len()).filter(|&j| !chosen[j]) {
            let g = oracle.gain(j);
            if best.is_none_or(|(b, _)| g > b) {
                best = Some((g, j));
            }
        }
        let Some((_, j)) = best else { break };
        chosen[j] = true;
        oracle.add(j);
        out.push(j);
    }
    out
}

/// Lazy greedy over stale upper bounds; same picks as [`naive_greedy`] when
/// gains never increase as the selection grows.
pub fn lazy_greedy<O: GainOracle>(oracle: &mut O, limit: usize) -> Vec<usize> {
    let mut heap: BinaryHeap<Entry> = (0..oracle.len())
        .map(|index| Entry { bound: oracle.gain(index), index, stamp: 0 })
        .collect();
    let mut out = Vec::new();
    while out.len() < limit {
        let Some(top) = heap.pop() else { break };
        if top.stamp == out.len() {
            oracle.add(top.index);
            out.push(top.index);
        } else {
            heap.push(Entry { bound: oracle.gain(top.index), index: top.index, stamp: out.len() });
        }
    }
    out
}

/// Lazy cost-ratio greedy under a knapsack budget.
pub fn lazy_ratio_greedy<O: GainOracle>(oracle: &mut O, costs: &[f64], budget: f64) -> Vec<usize> {
    let ratio = |g: f64, c: f64| if c > 0.0 { g / c } else { f64::INFINITY };
    let mut heap: BinaryHeap<Entry> = (0..oracle.len())
        .filter(|&j| costs[j] <= budget)
        .map(|index| Entry { bound: ratio(oracle.gain(index), costs[index]), index, stamp: 0 })
        .collect();
    let mut out = Vec::new();
    let mut left = budget;
    while let Some(top) = heap.pop() {
        if costs[top.index] > left {
            continue;
        }
        if top.stamp == out.len() {
            oracle.add(top.index);
            out.push(top.index);
            left -= costs[top.index];
        } else {
            let bound = ratio(oracle.gain(top.index), costs[top.index]);
            heap.push(Entry { bound, index: top.index, stamp: out.len() });
        }
    }
    out
}

fn run_greedy(problem: &SummaryProblem, set: &ObjectiveSet, weights: &[f64], offset: Option<&[f64]>, lazy: bool) -> Result<Vec<usize>> {
    let mut oracle = Weighted { state: set.state(), weights, offset };
    let mut picked = match problem.budget {
        Budget::Count(l) => {
            if lazy {
                lazy_greedy(&mut oracle, l)
            } else {
                naive_greedy(&mut oracle, l)
            }
        }
        Budget::Duration(t) => {
            let costs: Vec<f64> = (0..problem.len()).map(|i| problem.cost(i)).collect();
            if costs.iter().all(|c| *c > t) {
                return Err(SummaryError::InfeasibleBudget { budget_s: t });
            }
            let greedy = lazy_ratio_greedy(&mut oracle, &costs, t);
            let greedy_value = value_of(set, weights, offset, &greedy);
            let mut best_single: Option<(f64, usize)> = None;
            for j in (0..problem.len()).filter(|&j| costs[j] <= t) {
                let v = value_of(set, weights, offset, &[j]);
                if best_single.is_none_or(|(b, _)| v > b) {
                    best_single = Some((v, j));
                }
            }
            match best_single {
                Some((v, j)) if v > greedy_value => vec![j],
                _ => greedy,
            }
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

fn value_of(set: &ObjectiveSet, weights: &[f64], offset: Option<&[f64]>, selection: &[usize]) -> f64 {
    let mut s = set.state();
    for &j in selection {
        s.add(j);
    }
    let base: f64 = s.values().iter().zip(weights).map(|(v, w)| v * w).sum();
    base + offset.map_or(0.0, |o| selection.iter().map(|&j| o[j]).sum())
}

/// Maximizes the weighted objective under the problem's budget. Returns sorted indices.
pub fn greedy_select(problem: &SummaryProblem) -> Result<Vec<usize>> {
    problem.validate()?;
    let set = ObjectiveSet::new(problem);
    run_greedy(problem, &set, &problem.weights, None, true)
}

/// Same as [`greedy_select`] without lazy evaluation.
pub fn greedy_select_naive(problem: &SummaryProblem) -> Result<Vec<usize>> {
    problem.validate()?;
    let set = ObjectiveSet::new(problem);
    run_greedy(problem, &set, &problem.weights, None, false)
}

/// Fixed-length segments covering `[0, duration_s)`; a shorter tail segment is kept.
pub fn uniform_segments(video_id: &str, duration_s: f64, segment_s: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    if !(segment_s > 0.0) {
        return out;
    }
    let mut start = 0.0;
    let mut i = 0;
    while start < duration_s {
        let end = (start + segment_s).min(duration_s);
        out.push(Segment::new(video_id, i, start, end));
        i += 1;
        start = i as f64 * segment_s;
    }
    out
}

/// Segments between consecutive boundary times (e.g. superframe cuts).
pub fn segments_from_boundaries(video_id: &str, boundaries: &[f64]) -> Vec<Segment> {
    boundaries
        .windows(2)
        .filter(|w| w[1] > w[0])
        .enumerate()
        .map(|(i, w)| Segment::new(video_id, i, w[0], w[1]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub problem: SummaryProblem,
    pub references: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnParams {
    pub lambda: f64,
    pub passes: usize,
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams { lambda: 1e-3, passes: 50, seed: 0 }
    }
}

struct Prepared<'a> {
    problem: &'a SummaryProblem,
    set: ObjectiveSet,
    /// (modular loss term, objective values of the reference)
    refs: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Modular surrogate of `1 - F(y, reference)` for selections filling the budget.
fn loss_terms(problem: &SummaryProblem, reference: &[usize]) -> Vec<f64> {
    let in_ref: BTreeSet<usize> = reference.iter().copied().collect();
    match problem.budget {
        Budget::Count(l) => {
            let l = l as f64;
            let denom = l + reference.len() as f64;
            (0..problem.len())
                .map(|i| 1.0 / l - if in_ref.contains(&i) { 2.0 / denom } else { 0.0 })
                .collect()
        }
        Budget::Duration(t) => {
            let ref_len: f64 = reference.iter().map(|&i| problem.segments[i].duration_s()).sum();
            let denom = t + ref_len;
            (0..problem.len())
                .map(|i| {
                    let d = problem.segments[i].duration_s();
                    d / t - if in_ref.contains(&i) { 2.0 * d / denom } else { 0.0 }
                })
                .collect()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Regularized structured hinge objective and its subgradient at `w`.
fn hinge(prepared: &[Prepared], w: &[f64], lambda: f64, example: Option<(usize, usize)>) -> Result<(f64, Vec<f64>)> {
    let k = w.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; k];
    let mut count = 0usize;
    let mut visit = |p: &Prepared, r: usize| -> Result<()> {
        let (offset, f_ref) = &p.refs[r];
        let y_hat = run_greedy(p.problem, &p.set, w, Some(offset), true)?;
        let mut s = p.set.state();
        for &j in &y_hat {
            s.add(j);
        }
        let f_hat = s.values();
        let delta: f64 = 1.0 + y_hat.iter().map(|&j| offset[j]).sum::<f64>();
        loss += (dot(w, &f_hat) + delta - dot(w, f_ref)).max(0.0);
        for i in 0..k {
            grad[i] += f_hat[i] - f_ref[i];
        }
        count += 1;
        Ok(())
    };
    match example {
        Some((e, r)) => visit(&prepared[e], r)?,
        None => {
            for p in prepared {
                for r in 0..p.refs.len() {
                    visit(p, r)?;
                }
            }
        }
    }
    let c = count.max(1) as f64;
    let reg = 0.5 * lambda * dot(w, w);
    let g = grad.iter().zip(w).map(|(g, wi)| g / c + lambda * wi).collect();
    Ok((reg + loss / c, g))
}

/// Learns objective weights from reference summaries by projected
/// subgradient descent on the margin-rescaled structured hinge loss.
///
/// Loss-augmented inference is greedy with the modular surrogate of
/// `1 - F-measure` added to the objective. A pass that raises the training
/// objective is reverted and halves the step size; after repeated failures
/// the search stops. A non-finite objective aborts with
/// [`SummaryError::Diverged`]. The weights with the lowest objective seen
/// are returned, normalized to sum 1.
pub fn learn_weights(training: &[TrainingExample], params: &LearnParams) -> Result<Vec<f64>> {
    let first = training.first().ok_or(SummaryError::NoTraining)?;
    let objectives = first.problem.objectives.clone();
    let mut prepared = Vec::new();
    for ex in training {
        if ex.problem.objectives != objectives {
            return Err(SummaryError::ObjectiveMismatch);
        }
        let mut problem_check = ex.problem.clone();
        problem_check.weights = vec![1.0; objectives.len()];
        problem_check.validate()?;
        let set = ObjectiveSet::new(&ex.problem);
        let mut refs = Vec::new();
        for r in &ex.references {
            if let Some(&bad) = r.iter().find(|&&i| i >= ex.problem.len()) {
                return Err(SummaryError::BadIndex(bad));
            }
            if !ex.problem.is_feasible(r) {
                return Err(SummaryError::ReferenceOverBudget);
            }
            let mut s = set.state();
            for &j in r {
                s.add(j);
            }
            refs.push((loss_terms(&ex.problem, r), s.values()));
        }
        if refs.is_empty() {
            return Err(SummaryError::NoTraining);
        }
        prepared.push(Prepared { problem: &ex.problem, set, refs });
    }

    let k = objectives.len();
    let mut w = vec![1.0 / k as f64; k];
    let (mut prev, _) = hinge(&prepared, &w, params.lambda, None)?;
    let mut best = (prev, w.clone());
    let mut examples: Vec<(usize, usize)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(e, p)| (0..p.refs.len()).map(move |r| (e, r)))
        .collect();
    let mut t = 0usize;
    let mut scale = 1.0;
    let mut failures = 0;
    for pass in 0..params.passes {
        examples.shuffle(&mut rng::derived(params.seed, pass as u64));
        let start = w.clone();
        let start_t = t;
        for &ex in &examples {
            t += 1;
            let (_, g) = hinge(&prepared, &w, params.lambda, Some(ex))?;
            let step = scale / (params.lambda * t as f64);
            for i in 0..k {
                w[i] = (w[i] - step * g[i]).max(0.0);
            }
        }
        let (obj, _) = hinge(&prepared, &w, params.lambda, None)?;
        if !obj.is_finite() {
            return Err(SummaryError::Diverged);
        }
        if obj < best.0 {
            best = (obj, w.clone());
        }
        if obj > prev && pass > 0 {
            failures += 1;
            if failures > 20 {
                break;
            }
            scale *= 0.5;
            w = start;
            t = start_t;
        } else {
            failures = 0;
            prev = obj;
        }
    }

    let w = best.1;
    let sum: f64 = w.iter().sum();
    Ok(if sum > 0.0 { w.iter().map(|x| x / sum).collect() } else { vec![1.0 / k as f64; k] })
}

/// Problem file: segments, scores, a feature-channel reference and a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub segments: Vec<Segment>,
    pub mem_scores: Vec<f64>,
    /// Path of a feature channel keyed by `video_id:index`, relative to the problem file.
    #[serde(default)]
    pub features_ref: Option<String>,
    pub budget: Budget,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub objectives: Option<Vec<ObjectiveKind>>,
}

impl ProblemFile {
    /// Resolves the feature reference against `base_dir` and builds the problem.
    /// Without a feature reference every segment gets an empty vector.
    pub fn into_problem(self, base_dir: &Path) -> Result<SummaryProblem> {
        let segment_features = match &self.features_ref {
            Some(r) => {
                let ch = load_channel(&base_dir.join(r), None)?;
                self.segments
                    .iter()
                    .map(|s| {
                        ch.get(&s.item_id())
                            .map(<[f64]>::to_vec)
                            .ok_or_else(|| SummaryError::MissingFeatures(s.item_id()))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => vec![Vec::new(); self.segments.len()],
        };
        let objectives = self.objectives.unwrap_or_else(all_objectives);
        let weights = self.weights.unwrap_or_else(|| vec![1.0 / objectives.len() as f64; objectives.len()]);
        Ok(SummaryProblem {
            segments: self.segments,
            mem_scores: self.mem_scores,
            segment_features,
            budget: self.budget,
            weights,
            objectives,
            sigma_x: None,
            sigma_t: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSegment {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

/// Selection output: indices plus their time spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutput {
    pub indices: Vec<usize>,
    pub segments: Vec<SelectedSegment>,
}

impl SelectionOutput {
    pub fn new(problem: &SummaryProblem, indices: Vec<usize>) -> Self {
        let segments = indices
            .iter()
            .map(|&i| SelectedSegment { index: i, start_s: problem.segments[i].start_s, end_s: problem.segments[i].end_s })
            .collect();
        SelectionOutput { indices, segments }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(mem: &[f64], budget: Budget, weights: &[f64]) -> SummaryProblem {
        let segments: Vec<Segment> = (0..mem.len()).map(|i| Segment::new("v", i, i as f64 * 5.0, (i + 1) as f64 * 5.0)).collect();
        SummaryProblem {
            segment_features: (0..mem.len()).map(|i| vec![(i % 3) as f64, (i / 3) as f64]).collect(),
            segments,
            mem_scores: mem.to_vec(),
            budget,
            weights: weights.to_vec(),
            objectives: all_objectives(),
            sigma_x: None,
            sigma_t: None,
        }
    }

    #[test]
    fn vid_mem_examples() {
        let m = [0.9, 0.5, 0.8];
        assert_eq!(vid_mem(&[], &m), 0.0);
        assert!((vid_mem(&[0, 1, 2], &m) - 1.0).abs() < 1e-15);
        assert!((vid_mem(&[0, 2], &m) - 1.7 / 2.2).abs() < 1e-12);
    }

    #[test]
    fn facility_objectives_full_selection_is_one() {
        let p = problem(&[0.1, 0.2, 0.3, 0.4, 0.5], Budget::Count(2), &[1.0, 1.0, 1.0]);
        let all: Vec<usize> = (0..5).collect();
        assert!((vid_rep(&all, &p.segment_features, 0.7) - 1.0).abs() < 1e-12);
        assert!((vid_unif(&all, &p.segments, 3.0) - 1.0).abs() < 1e-12);
        assert_eq!(vid_rep(&[], &p.segment_features, 0.7), 0.0);
    }

    #[test]
    fn identical_features_any_selection_is_one() {
        let f = vec![vec![1.0, 2.0]; 4];
        assert!((vid_rep(&[2], &f, 0.5) - 1.0).abs() < 1e-12);
        let one = vec![Segment::new("v", 0, 0.0, 5.0)];
        assert_eq!(vid_unif(&[0], &one, 1.0), 1.0);
    }

    #[test]
    fn incremental_values_match_direct() {
        let p = problem(&[0.3, 0.9, 0.1, 0.7, 0.4, 0.6], Budget::Count(3), &[0.5, 0.3, 0.2]);
        let set = ObjectiveSet::new(&p);
        let mut s = set.state();
        for j in [4, 1, 2] {
            s.add(j);
        }
        let direct = objective_values(&p, &[4, 1, 2]);
        for (a, b) in s.values().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_mem_matches_sort() {
        let mem = [0.2, 0.9, 0.4, 0.9, 0.1, 0.5, 0.7, 0.3, 0.6, 0.8];
        let p = problem(&mem, Budget::Count(3), &[1.0, 0.0, 0.0]);
        let mut order: Vec<usize> = (0..mem.len()).collect();
        order.sort_by(|&a, &b| mem[b].total_cmp(&mem[a]).then(a.cmp(&b)));
        let mut expect = order[..3].to_vec();
        expect.sort_unstable();
        assert_eq!(greedy_select(&p).unwrap(), expect);
    }

    #[test]
    fn duration_budget_too_small() {
        let p = problem(&[0.2, 0.4], Budget::Duration(1.0), &[1.0, 0.0, 0.0]);
        assert!(matches!(greedy_select(&p), Err(SummaryError::InfeasibleBudget { .. })));
    }

    #[test]
    fn duration_budget_respected() {
        let mut p = problem(&[0.2, 0.4, 0.9, 0.3, 0.8], Budget::Duration(12.0), &[0.6, 0.2, 0.2]);
        p.segments[2].end_s = 14.0; // long high-value segment
        let sel = greedy_select(&p).unwrap();
        assert!(p.is_feasible(&sel));
        assert!(!sel.is_empty());
    }

    #[test]
    fn invalid_weights_rejected() {
        let p = problem(&[0.2, 0.4], Budget::Count(1), &[0.0, 0.0, 0.0]);
        assert!(matches!(greedy_select(&p), Err(SummaryError::InvalidWeights)));
        let p = problem(&[0.2, 0.4], Budget::Count(1), &[-1.0, 1.0, 0.0]);
        assert!(matches!(greedy_select(&p), Err(SummaryError::InvalidWeights)));
    }

    #[test]
    fn uniform_segmentation() {
        let s = uniform_segments("v", 12.0, 5.0);
        assert_eq!(s.len(), 3);
        assert_eq!((s[2].start_s, s[2].end_s), (10.0, 12.0));
        assert_eq!(s[1].timestamp_mid_s, 7.5);
        let b = segments_from_boundaries("v", &[0.0, 2.0, 2.0, 7.5]);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].index, 1);
    }

    #[test]
    fn single_objective_learns_unit_weight() {
        let mut p = problem(&[0.2, 0.9, 0.4, 0.7, 0.1], Budget::Count(2), &[1.0]);
        p.objectives = vec![ObjectiveKind::VidMem];
        let ex = TrainingExample { problem: p, references: vec![vec![1, 3]] };
        let w = learn_weights(&[ex], &LearnParams::default()).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn reference_over_budget_rejected() {
        let p = problem(&[0.2, 0.9, 0.4], Budget::Count(1), &[1.0, 1.0, 1.0]);
        let ex = TrainingExample { problem: p, references: vec![vec![0, 1]] };
        assert!(matches!(learn_weights(&[ex], &LearnParams::default()), Err(SummaryError::ReferenceOverBudget)));
    }

    #[test]
    fn budget_serde_shape() {
        assert_eq!(serde_json::to_string(&Budget::Count(3)).unwrap(), r#"{"count":3}"#);
        let d: Budget = serde_json::from_str(r#"{"duration_s":30.0}"#).unwrap();
        assert_eq!(d, Budget::Duration(30.0));
        assert_eq!(Budget::fraction_of(40, 0.15), Budget::Count(6));
    }
}
