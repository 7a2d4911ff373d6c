//! Domain types shared across the survey, scoring and summarization code.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Targets shown per viewing sequence.
pub const TARGETS_PER_SEQUENCE: usize = 4;
/// Fillers shown per viewing sequence (the same set for every sequence).
pub const FILLERS_PER_SEQUENCE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoRole {
    Target,
    Filler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Animals,
    Objects,
    Human,
    Sports,
    Nature,
    Outdoor,
    Other,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Animals,
        Category::Objects,
        Category::Human,
        Category::Sports,
        Category::Nature,
        Category::Outdoor,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Animals => "animals",
            Category::Objects => "objects",
            Category::Human => "human",
            Category::Sports => "sports",
            Category::Nature => "nature",
            Category::Outdoor => "outdoor",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoItem {
    pub id: String,
    pub role: VideoRole,
    pub category: Category,
    pub duration_s: f64,
    /// Manual annotation text the recall questions are written from.
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    TargetPositive,
    VigilancePositive,
    Distractor,
}

impl QuestionKind {
    /// True when the correct reply is "yes".
    pub fn is_positive(self) -> bool {
        !matches!(self, QuestionKind::Distractor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub kind: QuestionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_video_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub id: String,
    pub ordered_video_ids: Vec<String>,
    /// Position index of every target video inside `ordered_video_ids`.
    pub target_positions: BTreeMap<String, usize>,
}

impl Sequence {
    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.target_positions.keys().map(String::as_str)
    }

    pub fn fillers(&self) -> impl Iterator<Item = &str> {
        self.ordered_video_ids
            .iter()
            .filter(|id| !self.target_positions.contains_key(*id))
            .map(String::as_str)
    }

    /// Positions not occupied by a target, in ascending order.
    pub fn filler_positions(&self) -> Vec<usize> {
        let taken: BTreeSet<usize> = self.target_positions.values().copied().collect();
        (0..self.ordered_video_ids.len())
            .filter(|p| !taken.contains(p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub participant_id: String,
    pub question_id: String,
    pub answer: Answer,
    pub latency_ms: u64,
    pub correct: bool,
}

impl ResponseRecord {
    /// Builds a record, deriving correctness from the question kind.
    pub fn new(participant_id: &str, question: &Question, answer: Answer, latency_ms: u64) -> Self {
        let correct = match answer {
            Answer::Yes => question.kind.is_positive(),
            Answer::No => !question.kind.is_positive(),
            Answer::Timeout => false,
        };
        ResponseRecord {
            participant_id: participant_id.to_owned(),
            question_id: question.id.clone(),
            answer,
            latency_ms,
            correct,
        }
    }

    /// A "yes" that was right, i.e. a correct recall of a shown video.
    pub fn is_correct_recall(&self) -> bool {
        self.answer == Answer::Yes && self.correct
    }

    /// Time left in the response window, in seconds. Zero unless this is a correct recall.
    pub fn time_left_s(&self, window_s: f64) -> f64 {
        if self.is_correct_recall() {
            (window_s - self.latency_ms as f64 / 1000.0).max(0.0)
        } else {
            0.0
        }
    }
}

/// Per-video memorability. `score` is NaN (serialized as `null`) when no
/// participant contributed, see [`MemorabilityScore::is_defined`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorabilityScore {
    pub video_id: String,
    #[serde(with = "nan_as_null")]
    pub score: f64,
    #[serde(with = "nan_as_null")]
    pub hit_rate: f64,
    pub n_participants: usize,
}

impl MemorabilityScore {
    pub fn undefined(video_id: &str) -> Self {
        MemorabilityScore {
            video_id: video_id.to_owned(),
            score: f64::NAN,
            hit_rate: f64::NAN,
            n_participants: 0,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.n_participants > 0 && self.score.is_finite()
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub video_id: String,
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub timestamp_mid_s: f64,
}

impl Segment {
    pub fn new(video_id: &str, index: usize, start_s: f64, end_s: f64) -> Self {
        Segment {
            video_id: video_id.to_owned(),
            index,
            start_s,
            end_s,
            timestamp_mid_s: 0.5 * (start_s + end_s),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Key used for this segment in feature channels.
    pub fn item_id(&self) -> String {
        format!("{}:{}", self.video_id, self.index)
    }
}

/// Checks that each video's segments are well formed, ordered and non-overlapping.
pub fn check_segments(segments: &[Segment]) -> Vec<String> {
    let mut out = Vec::new();
    let mut last: BTreeMap<&str, &Segment> = BTreeMap::new();
    for s in segments {
        if !(s.start_s < s.end_s) {
            out.push(format!("empty segment: {}", s.item_id()));
        }
        if let Some(prev) = last.get(s.video_id.as_str()) {
            if s.start_s < prev.end_s || s.index <= prev.index {
                out.push(format!("segment out of order: {}", s.item_id()));
            }
        }
        last.insert(&s.video_id, s);
    }
    out
}

/// Study definition file: `{videos: [...], questions: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDefinition {
    pub videos: Vec<VideoItem>,
    pub questions: Vec<Question>,
}

impl StudyDefinition {
    pub fn validate(&self) -> Vec<String> {
        validate_study(&self.videos, &self.questions)
    }

    pub fn video(&self, id: &str) -> Option<&VideoItem> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn targets(&self) -> Vec<VideoItem> {
        self.videos.iter().filter(|v| v.role == VideoRole::Target).cloned().collect()
    }

    pub fn fillers(&self) -> Vec<VideoItem> {
        self.videos.iter().filter(|v| v.role == VideoRole::Filler).cloned().collect()
    }
}

/// Returns every invariant violation found in a study; empty means well formed.
pub fn validate_study(videos: &[VideoItem], questions: &[Question]) -> Vec<String> {
    let mut out = Vec::new();
    let mut ids: BTreeMap<&str, &VideoItem> = BTreeMap::new();
    for v in videos {
        if ids.insert(&v.id, v).is_some() {
            out.push(format!("duplicate video id: {}", v.id));
        }
        if !(v.duration_s > 0.0) {
            out.push(format!("non-positive duration: {}", v.id));
        }
    }

    let referenced: BTreeSet<&str> = questions
        .iter()
        .filter_map(|q| q.source_video_id.as_deref())
        .collect();
    for v in videos {
        let generates = v.role == VideoRole::Target || referenced.contains(v.id.as_str());
        if generates && v.caption.trim().is_empty() {
            out.push(format!("caption missing: {}", v.id));
        }
    }

    let mut qids = BTreeSet::new();
    for q in questions {
        if !qids.insert(q.id.as_str()) {
            out.push(format!("duplicate question id: {}", q.id));
        }
        match (q.kind.is_positive(), q.source_video_id.as_deref()) {
            (true, None) => out.push(format!("positive question without source video: {}", q.id)),
            (false, Some(_)) => out.push(format!("distractor with source video: {}", q.id)),
            (true, Some(src)) => match ids.get(src) {
                None => out.push(format!("unknown source video {src} for question {}", q.id)),
                Some(v) => {
                    let want = match q.kind {
                        QuestionKind::TargetPositive => VideoRole::Target,
                        _ => VideoRole::Filler,
                    };
                    if v.role != want {
                        out.push(format!("question {} points at a video of the wrong role", q.id));
                    }
                }
            },
            (false, None) => {}
        }
    }

    let n_targets = videos.iter().filter(|v| v.role == VideoRole::Target).count();
    let n_fillers = videos.len() - n_targets;
    if n_targets < TARGETS_PER_SEQUENCE {
        out.push(format!(
            "insufficient targets for a {TARGETS_PER_SEQUENCE}-target sequence"
        ));
    }
    if n_fillers < FILLERS_PER_SEQUENCE {
        out.push(format!(
            "insufficient fillers: {n_fillers} of {FILLERS_PER_SEQUENCE} required"
        ));
    }
    out
}
