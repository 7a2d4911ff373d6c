//! Synthetic studies with planted memorability, and an exhaustive summary
//! oracle.
//!
//! Simulated participants run through the same session state machine as
//! real ones, so their logs are replayable by the service and the scorer.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Answer, Category, Question, QuestionKind, Sequence, StudyDefinition, VideoItem, VideoRole, FILLERS_PER_SEQUENCE,
};
use crate::protocol::{assemble_round, build_sequences, round_seed, ProtocolConfig, ProtocolError, ProtocolVariant, SessionEvent, SessionState};
use crate::rng;
use crate::scoring::ParticipantLog;
use crate::summarizer::{weighted_value, Budget, SummaryError, SummaryProblem};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("unknown question {0}")]
    UnknownQuestion(String),
    #[error("session of {0} did not finish")]
    Unfinished(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of target videos; a multiple of the targets per sequence.
    pub n_videos: usize,
    pub n_fillers: usize,
    pub n_participants: usize,
    pub n_distractors: usize,
    /// Planted memorability per target id; missing entries are drawn uniformly.
    pub planted_mem: BTreeMap<String, f64>,
    pub recall_prob_slope: f64,
    pub recall_prob_intercept: f64,
    /// Time-left of a correct recall is `window * (0.4 + time_slope * m)` plus noise.
    pub time_slope: f64,
    pub time_noise_sd: f64,
    /// Probability of a "yes" to a distractor.
    pub false_alarm_prob: f64,
    pub vigilance_hit_prob: f64,
    /// Share of misses that run out the clock instead of answering "no".
    pub miss_timeout_frac: f64,
    /// Share of participants answering yes/no uniformly at random.
    pub random_responder_frac: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_videos: 100,
            n_fillers: FILLERS_PER_SEQUENCE,
            n_participants: 500,
            n_distractors: 40,
            planted_mem: BTreeMap::new(),
            recall_prob_slope: 6.0,
            recall_prob_intercept: -3.0,
            time_slope: 0.5,
            time_noise_sd: 0.5,
            false_alarm_prob: 0.1,
            vigilance_hit_prob: 0.9,
            miss_timeout_frac: 0.2,
            random_responder_frac: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// No link between planted memorability and behaviour.
    pub fn null_model(mut self) -> Self {
        self.recall_prob_slope = 0.0;
        self.time_slope = 0.0;
        self
    }

    /// Number of participants that gives each target `per_video` viewers.
    pub fn participants_for(n_videos: usize, per_video: usize, targets_per_sequence: usize) -> usize {
        // every target appears in `group` of the `n_videos` sequences
        n_videos * per_video / targets_per_sequence
    }

    fn validate(&self, protocol: &ProtocolConfig) -> Result<(), SimError> {
        let group = protocol.targets_per_sequence;
        if self.n_videos == 0 || self.n_videos % group != 0 {
            return Err(SimError::InvalidConfig(format!("n_videos must be a positive multiple of {group}")));
        }
        if self.n_fillers != FILLERS_PER_SEQUENCE {
            return Err(SimError::InvalidConfig(format!("n_fillers must be {FILLERS_PER_SEQUENCE}")));
        }
        if self.n_participants == 0 {
            return Err(SimError::InvalidConfig("n_participants must be positive".into()));
        }
        if !(self.time_noise_sd >= 0.0) {
            return Err(SimError::InvalidConfig("time_noise_sd must be non-negative".into()));
        }
        Ok(())
    }
}

/// One timestamped session event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

/// Event log of one participant's session, times relative to session start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLog {
    pub participant_id: String,
    pub sequence_id: String,
    pub question_ids: Vec<String>,
    pub events: Vec<TimedEvent>,
}

impl SessionLog {
    /// Replays the events through the session state machine.
    pub fn replay(&self, questions: &HashMap<&str, &Question>, protocol: &ProtocolConfig) -> Result<SessionState, SimError> {
        let round = self
            .question_ids
            .iter()
            .map(|id| questions.get(id.as_str()).map(|q| (*q).clone()).ok_or_else(|| SimError::UnknownQuestion(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut state = SessionState::new(&self.participant_id, &self.sequence_id, round, protocol);
        for e in &self.events {
            state = state.advance(&e.event, e.at_ms)?;
        }
        Ok(state)
    }
}

/// A study definition together with its sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyBundle {
    pub protocol: ProtocolConfig,
    pub study: StudyDefinition,
    pub sequences: Vec<Sequence>,
    #[serde(default)]
    pub planted: BTreeMap<String, f64>,
    #[serde(default)]
    pub sessions: Vec<SessionLog>,
}

impl StudyBundle {
    /// Response records of every finished session.
    pub fn participant_logs(&self) -> Result<Vec<ParticipantLog>, SimError> {
        let questions: HashMap<&str, &Question> = self.study.questions.iter().map(|q| (q.id.as_str(), q)).collect();
        self.sessions
            .iter()
            .map(|s| {
                let state = s.replay(&questions, &self.protocol)?;
                if !state.is_done() {
                    return Err(SimError::Unfinished(s.participant_id.clone()));
                }
                Ok(ParticipantLog {
                    participant_id: s.participant_id.clone(),
                    sequence_id: s.sequence_id.clone(),
                    records: state.records,
                })
            })
            .collect()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Builds the synthetic study: targets `v000..`, fillers `f000..`, one
/// question per target and filler, plus distractors `d000..`.
pub fn synthetic_study(config: &SimConfig) -> (StudyDefinition, BTreeMap<String, f64>) {
    let mut rng = rng::derived(config.seed, u64::MAX);
    let mut videos = Vec::new();
    let mut questions = Vec::new();
    let mut planted = BTreeMap::new();
    for i in 0..config.n_videos {
        let id = format!("v{i:03}");
        let m = config.planted_mem.get(&id).copied().unwrap_or_else(|| rng.random::<f64>()).clamp(0.0, 1.0);
        planted.insert(id.clone(), m);
        videos.push(VideoItem {
            id: id.clone(),
            role: VideoRole::Target,
            category: Category::ALL[i % Category::ALL.len()],
            duration_s: 10.0,
            caption: format!("synthetic target clip {i}"),
        });
        questions.push(Question {
            id: format!("q_{id}"),
            text: format!("Did you see synthetic target clip {i}?"),
            kind: QuestionKind::TargetPositive,
            source_video_id: Some(id),
        });
    }
    for i in 0..config.n_fillers {
        let id = format!("f{i:03}");
        videos.push(VideoItem {
            id: id.clone(),
            role: VideoRole::Filler,
            category: Category::ALL[i % Category::ALL.len()],
            duration_s: 10.0,
            caption: format!("synthetic filler clip {i}"),
        });
        questions.push(Question {
            id: format!("q_{id}"),
            text: format!("Did you see synthetic filler clip {i}?"),
            kind: QuestionKind::VigilancePositive,
            source_video_id: Some(id),
        });
    }
    for i in 0..config.n_distractors {
        questions.push(Question {
            id: format!("d{i:03}"),
            text: format!("Did you see unseen scene {i}?"),
            kind: QuestionKind::Distractor,
            source_video_id: None,
        });
    }
    (StudyDefinition { videos, questions }, planted)
}

struct Behaviour<'a> {
    config: &'a SimConfig,
    planted: &'a BTreeMap<String, f64>,
    window_ms: u64,
    random: bool,
}

impl Behaviour<'_> {
    fn uniform_latency(&self, rng: &mut rng::Rng) -> u64 {
        rng.random_range(300..=self.window_ms.max(300))
    }

    /// Reply to one question, or `None` for letting the window expire.
    fn respond(&self, q: &Question, rng: &mut rng::Rng, noise: &Normal<f64>) -> Option<(Answer, u64)> {
        let c = self.config;
        if self.random {
            let a = if rng.random_bool(0.5) { Answer::Yes } else { Answer::No };
            return Some((a, self.uniform_latency(rng)));
        }
        match q.kind {
            QuestionKind::TargetPositive => {
                let m = q.source_video_id.as_ref().and_then(|v| self.planted.get(v)).copied().unwrap_or(0.5);
                let p = logistic(c.recall_prob_slope * m + c.recall_prob_intercept).clamp(0.01, 0.99);
                if rng.random_bool(p) {
                    let window = self.window_ms as f64 / 1000.0;
                    let left = (window * (0.4 + c.time_slope * m) + noise.sample(rng)).clamp(0.0, window);
                    let latency = ((window - left) * 1000.0).round() as u64;
                    Some((Answer::Yes, latency.min(self.window_ms)))
                } else if rng.random_bool(c.miss_timeout_frac.clamp(0.0, 1.0)) {
                    None
                } else {
                    Some((Answer::No, self.uniform_latency(rng)))
                }
            }
            QuestionKind::VigilancePositive => {
                let a = if rng.random_bool(c.vigilance_hit_prob.clamp(0.0, 1.0)) { Answer::Yes } else { Answer::No };
                Some((a, self.uniform_latency(rng)))
            }
            QuestionKind::Distractor => {
                let a = if rng.random_bool(c.false_alarm_prob.clamp(0.0, 1.0)) { Answer::Yes } else { Answer::No };
                Some((a, self.uniform_latency(rng)))
            }
        }
    }
}

fn simulate_session(
    index: usize,
    sequence: &Sequence,
    pool: &[Question],
    protocol: &ProtocolConfig,
    behaviour: &Behaviour,
    viewing_ms: u64,
) -> Result<SessionLog, SimError> {
    let seed = behaviour.config.seed;
    let round = assemble_round(sequence, pool, round_seed(seed, index as u64), protocol)?;
    let mut rng = rng::derived(seed, 2 * index as u64 + 1);
    let noise = Normal::new(0.0, behaviour.config.time_noise_sd).expect("sd checked");
    let behaviour = Behaviour { random: rng.random_bool(behaviour.config.random_responder_frac.clamp(0.0, 1.0)), ..*behaviour };

    let mut t = viewing_ms;
    let mut events = vec![TimedEvent { at_ms: t, event: SessionEvent::ViewingDone }];
    t += protocol.rest_ms();
    events.push(TimedEvent { at_ms: t, event: SessionEvent::RestElapsed });
    for (i, q) in round.iter().enumerate() {
        if protocol.variant == ProtocolVariant::ImageFlash {
            t += protocol.flash_ms();
            events.push(TimedEvent { at_ms: t, event: SessionEvent::FlashDone { question: i } });
        }
        match behaviour.respond(q, &mut rng, &noise) {
            Some((answer, latency_ms)) => {
                t += latency_ms;
                events.push(TimedEvent { at_ms: t, event: SessionEvent::Answer { question: i, answer, latency_ms } });
            }
            None => {
                t += protocol.window_ms();
                events.push(TimedEvent { at_ms: t, event: SessionEvent::WindowExpired { question: i } });
            }
        }
    }
    Ok(SessionLog {
        participant_id: format!("p{index:04}"),
        sequence_id: sequence.id.clone(),
        question_ids: round.into_iter().map(|q| q.id).collect(),
        events,
    })
}

/// Generates a study and one session per participant.
///
/// Participant `k` views sequence `k mod n_sequences`, which is the
/// least-assigned rule with ties to the lowest sequence id.
pub fn simulate_study(config: &SimConfig, protocol: &ProtocolConfig) -> Result<StudyBundle, SimError> {
    protocol.validate()?;
    config.validate(protocol)?;
    let (study, planted) = synthetic_study(config);
    let group = protocol.targets_per_sequence;
    let sequences = build_sequences(&study.targets(), &study.fillers(), config.n_videos / group, group)?;
    let durations: HashMap<&str, f64> = study.videos.iter().map(|v| (v.id.as_str(), v.duration_s)).collect();
    let behaviour = Behaviour { config, planted: &planted, window_ms: protocol.window_ms(), random: false };

    let sessions = (0..config.n_participants)
        .into_par_iter()
        .map(|k| {
            let seq = &sequences[k % sequences.len()];
            let viewing_ms = (seq.ordered_video_ids.iter().map(|v| durations[v.as_str()]).sum::<f64>() * 1000.0).round() as u64;
            simulate_session(k, seq, &study.questions, protocol, &behaviour, viewing_ms)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(StudyBundle { protocol: protocol.clone(), study, sequences, planted, sessions })
}

/// Exact maximizer of the weighted objective by enumerating every feasible
/// subset. Ties go to the lexicographically smallest sorted index list.
pub fn brute_force_summary(problem: &SummaryProblem) -> Result<Vec<usize>, SummaryError> {
    problem.validate()?;
    let n = problem.len();
    if n > 20 {
        return Err(SummaryError::TooLarge(n));
    }
    if let Budget::Duration(t) = problem.budget {
        if problem.segments.iter().all(|s| s.duration_s() > t) {
            return Err(SummaryError::InfeasibleBudget { budget_s: t });
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << n) {
        let sel: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if !problem.is_feasible(&sel) {
            continue;
        }
        let v = weighted_value(problem, &sel);
        let better = match &best {
            None => true,
            Some((bv, bs)) => v > *bv || (v == *bv && sel < *bs),
        };
        if better {
            best = Some((v, sel));
        }
    }
    Ok(best.map(|(_, s)| s).unwrap_or_default())
}
