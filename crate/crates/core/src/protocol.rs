//! Recall-survey protocol: balanced viewing sequences, question rounds and
//! the per-participant session state machine.
//!
//! A session moves through `viewing -> rest -> recall -> done`. During
//! recall each question gets a fixed response window; an expired window is
//! recorded as a [`Answer::Timeout`] and counts as a wrong reply. Answers
//! cannot be changed once recorded.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Answer, Question, QuestionKind, ResponseRecord, Sequence, VideoItem, FILLERS_PER_SEQUENCE,
};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("invalid protocol config: {0}")]
    InvalidConfig(String),
    #[error("{n} targets cannot be split into groups of {group}")]
    NonDivisibleTargets { n: usize, group: usize },
    #[error("expected {want} filler videos, got {got}")]
    FillerCount { got: usize, want: usize },
    #[error("duplicate video id: {0}")]
    DuplicateVideo(String),
    #[error("question pool has {have} usable {kind} questions, {need} required")]
    PoolUnderflow { kind: &'static str, have: usize, need: usize },
    #[error("event {event} is not allowed in phase {phase:?}")]
    PhaseViolation { phase: SessionPhase, event: &'static str },
    #[error("question {0} was already answered")]
    DuplicateAnswer(usize),
    #[error("event for question {got} while question {expected} is current")]
    OutOfOrder { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolVariant {
    /// Textual yes/no questions about the viewed videos.
    VideoQuestions,
    /// A frame is flashed before each question (sub-shot experiment).
    ImageFlash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub variant: ProtocolVariant,
    pub rest_period_s: f64,
    pub response_window_s: f64,
    pub flash_duration_s: f64,
    pub questions_per_round: usize,
    pub targets_per_sequence: usize,
    pub vigilance_per_round: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            variant: ProtocolVariant::VideoQuestions,
            rest_period_s: 30.0,
            response_window_s: 5.0,
            flash_duration_s: 0.5,
            questions_per_round: 20,
            targets_per_sequence: 4,
            vigilance_per_round: 4,
        }
    }
}

impl ProtocolConfig {
    pub fn image_flash() -> Self {
        ProtocolConfig {
            variant: ProtocolVariant::ImageFlash,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.response_window_s > 0.0) {
            return Err(ProtocolError::InvalidConfig("response_window_s must be positive".into()));
        }
        if self.rest_period_s < 0.0 || self.flash_duration_s < 0.0 {
            return Err(ProtocolError::InvalidConfig("durations must be non-negative".into()));
        }
        if self.questions_per_round < self.targets_per_sequence + self.vigilance_per_round {
            return Err(ProtocolError::InvalidConfig(
                "questions_per_round must cover targets and vigilance questions".into(),
            ));
        }
        Ok(())
    }

    pub fn window_ms(&self) -> u64 {
        (self.response_window_s * 1000.0).round() as u64
    }

    pub fn rest_ms(&self) -> u64 {
        (self.rest_period_s * 1000.0).round() as u64
    }

    pub fn flash_ms(&self) -> u64 {
        (self.flash_duration_s * 1000.0).round() as u64
    }

    pub fn distractors_per_round(&self) -> usize {
        self.questions_per_round - self.targets_per_sequence - self.vigilance_per_round
    }
}

/// Positions of the target slots in a sequence of `total` videos, spread evenly.
pub fn target_slots(total: usize, group: usize) -> Vec<usize> {
    (0..group).map(|p| (2 * p + 1) * total / (2 * group)).collect()
}

/// Builds `combos * perms_per_combo` viewing sequences.
///
/// Targets are split, in input order, into `combos` disjoint groups of
/// `perms_per_combo` videos. Every sequence contains all fillers at the same
/// positions; for permutation `r` the target slot `p` holds group member
/// `(r + p) mod perms_per_combo` (a cyclic Latin square), so each target
/// visits each slot exactly once within its combination.
pub fn build_sequences(
    targets: &[VideoItem],
    fillers: &[VideoItem],
    combos: usize,
    perms_per_combo: usize,
) -> Result<Vec<Sequence>, ProtocolError> {
    let group = perms_per_combo;
    if group == 0 || combos == 0 || targets.len() != combos * group {
        return Err(ProtocolError::NonDivisibleTargets { n: targets.len(), group });
    }
    if fillers.len() != FILLERS_PER_SEQUENCE {
        return Err(ProtocolError::FillerCount { got: fillers.len(), want: FILLERS_PER_SEQUENCE });
    }
    let mut seen = BTreeSet::new();
    for v in targets.iter().chain(fillers) {
        if !seen.insert(v.id.as_str()) {
            return Err(ProtocolError::DuplicateVideo(v.id.clone()));
        }
    }

    let total = fillers.len() + group;
    let slots = target_slots(total, group);
    let mut sequences = Vec::with_capacity(combos * group);
    for (c, members) in targets.chunks(group).enumerate() {
        for r in 0..group {
            let mut ordered = Vec::with_capacity(total);
            let mut target_positions = std::collections::BTreeMap::new();
            let mut filler_iter = fillers.iter();
            let mut slot = 0;
            for pos in 0..total {
                if slot < group && slots[slot] == pos {
                    let t = &members[(r + slot) % group];
                    target_positions.insert(t.id.clone(), pos);
                    ordered.push(t.id.clone());
                    slot += 1;
                } else {
                    ordered.push(filler_iter.next().expect("filler count checked").id.clone());
                }
            }
            sequences.push(Sequence {
                id: format!("seq{:03}", c * group + r),
                ordered_video_ids: ordered,
                target_positions,
            });
        }
    }
    Ok(sequences)
}

/// Seed shared by every permutation of one combination (same target set).
fn combination_seed(sequence: &Sequence) -> u64 {
    let key = sequence.targets().collect::<Vec<_>>().join("\u{1f}");
    rng::fnv1a(key.as_bytes())
}

/// Assembles the recall round for one viewing of `sequence`.
///
/// One target-positive question per target, `vigilance_per_round` questions
/// about distinct fillers of the sequence, and distractors for the rest. The
/// distractor set depends only on the combination, the vigilance draw and the
/// final order depend on `rng_seed`.
pub fn assemble_round(
    sequence: &Sequence,
    pool: &[Question],
    rng_seed: u64,
    config: &ProtocolConfig,
) -> Result<Vec<Question>, ProtocolError> {
    config.validate()?;
    let mut rng = rng::seeded(rng_seed);
    let mut round = Vec::with_capacity(config.questions_per_round);

    let mut targets: Vec<(&str, usize)> = sequence
        .target_positions
        .iter()
        .map(|(id, p)| (id.as_str(), *p))
        .collect();
    targets.sort_by_key(|(_, p)| *p);
    let mut have_targets = 0;
    for (target, _) in &targets {
        let candidates: Vec<&Question> = pool
            .iter()
            .filter(|q| q.kind == QuestionKind::TargetPositive && q.source_video_id.as_deref() == Some(*target))
            .collect();
        if let Some(q) = candidates.choose(&mut rng) {
            round.push((*q).clone());
            have_targets += 1;
        }
    }
    if have_targets < targets.len() || have_targets < config.targets_per_sequence {
        return Err(ProtocolError::PoolUnderflow {
            kind: "target_positive",
            have: have_targets,
            need: targets.len().max(config.targets_per_sequence),
        });
    }

    // one vigilance question per chosen filler
    let fillers: Vec<&str> = sequence.fillers().collect();
    let vigilance_by_filler: Vec<Vec<&Question>> = fillers
        .iter()
        .map(|f| {
            pool.iter()
                .filter(|q| q.kind == QuestionKind::VigilancePositive && q.source_video_id.as_deref() == Some(*f))
                .collect()
        })
        .filter(|c: &Vec<&Question>| !c.is_empty())
        .collect();
    if vigilance_by_filler.len() < config.vigilance_per_round {
        return Err(ProtocolError::PoolUnderflow {
            kind: "vigilance_positive",
            have: vigilance_by_filler.len(),
            need: config.vigilance_per_round,
        });
    }
    let mut picked: Vec<usize> = sample(&mut rng, vigilance_by_filler.len(), config.vigilance_per_round).into_vec();
    picked.sort_unstable();
    for i in picked {
        let q = vigilance_by_filler[i].choose(&mut rng).expect("non-empty");
        round.push((*q).clone());
    }

    let distractors: Vec<&Question> = pool.iter().filter(|q| q.kind == QuestionKind::Distractor).collect();
    let need = config.distractors_per_round();
    if distractors.len() < need {
        return Err(ProtocolError::PoolUnderflow { kind: "distractor", have: distractors.len(), need });
    }
    let mut combo_rng = rng::seeded(combination_seed(sequence));
    let mut picked: Vec<usize> = sample(&mut combo_rng, distractors.len(), need).into_vec();
    picked.sort_unstable();
    round.extend(picked.into_iter().map(|i| distractors[i].clone()));

    round.shuffle(&mut rng);
    Ok(round)
}

/// Round seed for the `k`-th assignment of a study seeded with `seed`.
pub fn round_seed(seed: u64, k: u64) -> u64 {
    rng::derive_seed(seed, 2 * k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Viewing,
    Rest,
    Recall,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    ViewingDone,
    RestElapsed,
    /// Image-flash variant only: the frame for `question` has been shown.
    FlashDone { question: usize },
    Answer { question: usize, answer: Answer, latency_ms: u64 },
    WindowExpired { question: usize },
}

impl SessionEvent {
    fn name(&self) -> &'static str {
        match self {
            SessionEvent::ViewingDone => "viewing_done",
            SessionEvent::RestElapsed => "rest_elapsed",
            SessionEvent::FlashDone { .. } => "flash_done",
            SessionEvent::Answer { .. } => "answer",
            SessionEvent::WindowExpired { .. } => "window_expired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub participant_id: String,
    pub sequence_id: String,
    pub phase: SessionPhase,
    pub current_question: Option<usize>,
    /// Server time (ms) at which each question's response window opened.
    pub issued_at: Vec<Option<u64>>,
    /// Image-flash variant: the current question's frame has not been shown yet.
    pub flash_pending: bool,
    pub questions: Vec<Question>,
    pub records: Vec<ResponseRecord>,
    pub variant: ProtocolVariant,
    pub window_ms: u64,
}

impl SessionState {
    pub fn new(participant_id: &str, sequence_id: &str, questions: Vec<Question>, config: &ProtocolConfig) -> Self {
        SessionState {
            participant_id: participant_id.to_owned(),
            sequence_id: sequence_id.to_owned(),
            phase: SessionPhase::Viewing,
            current_question: None,
            issued_at: vec![None; questions.len()],
            flash_pending: false,
            questions,
            records: Vec::new(),
            variant: config.variant,
            window_ms: config.window_ms(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == SessionPhase::Done
    }

    pub fn current(&self) -> Option<&Question> {
        self.current_question.and_then(|i| self.questions.get(i))
    }

    fn violation(&self, event: &SessionEvent) -> ProtocolError {
        ProtocolError::PhaseViolation { phase: self.phase, event: event.name() }
    }

    fn check_question(&self, question: usize) -> Result<(), ProtocolError> {
        let current = self.current_question.unwrap_or(0);
        if question < current {
            Err(ProtocolError::DuplicateAnswer(question))
        } else if question > current {
            Err(ProtocolError::OutOfOrder { expected: current, got: question })
        } else {
            Ok(())
        }
    }

    /// Opens question `index` at `at_ms`, or finishes the session.
    fn open_question(&mut self, index: usize, at_ms: u64) {
        if index >= self.questions.len() {
            self.phase = SessionPhase::Done;
            self.current_question = None;
            self.flash_pending = false;
            return;
        }
        self.current_question = Some(index);
        if self.variant == ProtocolVariant::ImageFlash {
            self.flash_pending = true;
        } else {
            self.issued_at[index] = Some(at_ms);
        }
    }

    /// Applies `event` observed at server time `at_ms` and returns the new state.
    pub fn advance(&self, event: &SessionEvent, at_ms: u64) -> Result<SessionState, ProtocolError> {
        let mut next = self.clone();
        match (self.phase, event) {
            (SessionPhase::Viewing, SessionEvent::ViewingDone) => next.phase = SessionPhase::Rest,
            (SessionPhase::Rest, SessionEvent::RestElapsed) => {
                next.phase = SessionPhase::Recall;
                next.open_question(0, at_ms);
            }
            (SessionPhase::Recall, SessionEvent::FlashDone { question }) => {
                self.check_question(*question)?;
                if !self.flash_pending {
                    return Err(self.violation(event));
                }
                next.flash_pending = false;
                next.issued_at[*question] = Some(at_ms);
            }
            (SessionPhase::Recall, SessionEvent::Answer { question, answer, latency_ms }) => {
                self.check_question(*question)?;
                if self.flash_pending {
                    return Err(self.violation(event));
                }
                let q = &self.questions[*question];
                let record = if *answer == Answer::Timeout || *latency_ms > self.window_ms {
                    ResponseRecord::new(&self.participant_id, q, Answer::Timeout, self.window_ms)
                } else {
                    ResponseRecord::new(&self.participant_id, q, *answer, *latency_ms)
                };
                next.records.push(record);
                next.open_question(question + 1, at_ms);
            }
            (SessionPhase::Recall, SessionEvent::WindowExpired { question }) => {
                self.check_question(*question)?;
                let q = &self.questions[*question];
                next.records.push(ResponseRecord::new(&self.participant_id, q, Answer::Timeout, self.window_ms));
                next.open_question(question + 1, at_ms);
            }
            _ => return Err(self.violation(event)),
        }
        Ok(next)
    }

    /// Replays a timestamped event log from `self`.
    pub fn replay<'a>(
        &self,
        events: impl IntoIterator<Item = &'a (SessionEvent, u64)>,
    ) -> Result<SessionState, ProtocolError> {
        let mut state = self.clone();
        for (event, at) in events {
            state = state.advance(event, *at)?;
        }
        Ok(state)
    }
}
