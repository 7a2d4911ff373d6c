//! Survey backend: study lifecycle, sequence assignment, timed recall
//! sessions and score export.
//!
//! Every state change is an entry of an append-only log, and live
//! operations mutate state only by applying the entry they append. Replaying
//! the log therefore rebuilds the exact same state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Answer, MemorabilityScore, Question, ResponseRecord, Sequence, StudyDefinition};
use crate::protocol::{
    assemble_round, build_sequences, round_seed, ProtocolConfig, ProtocolError, SessionEvent, SessionPhase, SessionState,
};
use crate::scoring::{compute_scores, write_scores_csv, ParticipantLog, ScoreReport, ScoringConfig, ScoringError};

/// Slack on the response window for transport delay.
pub const GRACE_MS: u64 = 500;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Wall-clock milliseconds since the Unix epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }
}

/// Clock moved by hand, for tests and log-driven replays.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown study {0}")]
    UnknownStudy(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("study {0} already exists")]
    DuplicateStudy(String),
    #[error("study {id} is {state:?}")]
    WrongState { id: String, state: StudyState },
    #[error("participant {0} already took part in this study")]
    RepeatParticipant(String),
    #[error("question {0} is not part of this session")]
    UnknownQuestion(String),
    #[error("study has no completed sessions")]
    NoCompletedSessions,
    #[error("invalid study: {}", .0.join("; "))]
    InvalidStudy(Vec<String>),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("log entry {line}: {source}")]
    BadLog { line: usize, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyState {
    Draft,
    Live,
    Closed,
}

fn default_cap() -> usize {
    5
}

/// Body of a study-creation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateStudy {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    pub study: StudyDefinition,
    /// Built from the study's targets and fillers when absent.
    #[serde(default)]
    pub sequences: Option<Vec<Sequence>>,
    /// Assignments per sequence after which new assignments are flagged.
    #[serde(default = "default_cap")]
    pub assignment_cap: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    pub protocol: ProtocolConfig,
    pub definition: StudyDefinition,
    pub sequences: Vec<Sequence>,
    pub assignment_counts: BTreeMap<String, usize>,
    pub state: StudyState,
    pub assignment_cap: usize,
    pub seed: u64,
    /// participant id -> session id
    pub participants: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub study_id: String,
    pub started_at_ms: u64,
    /// Time of the last accepted event.
    pub last_event_ms: u64,
    pub state: SessionState,
    pub focus_losses: Vec<(u64, Option<String>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    StudyCreated { at_ms: u64, study: Box<Study> },
    StudyOpened { at_ms: u64, study_id: String },
    StudyClosed { at_ms: u64, study_id: String },
    SessionStarted { at_ms: u64, study_id: String, session_id: String, participant_id: String, sequence_id: String, question_ids: Vec<String> },
    Event { at_ms: u64, session_id: String, event: SessionEvent },
    FocusLost { at_ms: u64, session_id: String, detail: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaylistItem {
    pub video_id: String,
    pub url: String,
    pub duration_s: f64,
}

/// Reply to a session request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub session_id: String,
    pub sequence_id: String,
    pub playlist: Vec<PlaylistItem>,
    pub rest_period_s: f64,
    pub response_window_s: f64,
    /// The chosen sequence had already reached the assignment cap.
    pub over_cap: bool,
}

/// What the client should show next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NextItem {
    Rest { remaining_ms: u64 },
    Flash { index: usize, image_url: String, flash_ms: u64, issued_at_ms: u64 },
    Question { index: usize, question_id: String, text: String, issued_at_ms: u64, window_ms: u64 },
    Done,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct Inner {
    studies: BTreeMap<String, Study>,
    sessions: BTreeMap<String, SessionRecord>,
    applied: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    /// Number of log entries folded into `state`.
    pub applied: usize,
    state: Inner,
}

impl Inner {
    fn study(&self, id: &str) -> Result<&Study> {
        self.studies.get(id).ok_or_else(|| ServiceError::UnknownStudy(id.to_owned()))
    }

    fn session(&self, id: &str) -> Result<&SessionRecord> {
        self.sessions.get(id).ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    fn apply(&mut self, entry: &LogEntry) -> Result<()> {
        match entry {
            LogEntry::StudyCreated { study, .. } => {
                if self.studies.contains_key(&study.id) {
                    return Err(ServiceError::DuplicateStudy(study.id.clone()));
                }
                self.studies.insert(study.id.clone(), (**study).clone());
            }
            LogEntry::StudyOpened { study_id, .. } => {
                let s = self.studies.get_mut(study_id).ok_or_else(|| ServiceError::UnknownStudy(study_id.clone()))?;
                if s.state != StudyState::Draft {
                    return Err(ServiceError::WrongState { id: study_id.clone(), state: s.state });
                }
                s.state = StudyState::Live;
            }
            LogEntry::StudyClosed { study_id, .. } => {
                let s = self.studies.get_mut(study_id).ok_or_else(|| ServiceError::UnknownStudy(study_id.clone()))?;
                s.state = StudyState::Closed;
            }
            LogEntry::SessionStarted { at_ms, study_id, session_id, participant_id, sequence_id, question_ids } => {
                let study = self.studies.get_mut(study_id).ok_or_else(|| ServiceError::UnknownStudy(study_id.clone()))?;
                if study.state != StudyState::Live {
                    return Err(ServiceError::WrongState { id: study_id.clone(), state: study.state });
                }
                if study.participants.contains_key(participant_id) {
                    return Err(ServiceError::RepeatParticipant(participant_id.clone()));
                }
                let by_id: HashMap<&str, &Question> =
                    study.definition.questions.iter().map(|q| (q.id.as_str(), q)).collect();
                let questions = question_ids
                    .iter()
                    .map(|q| by_id.get(q.as_str()).map(|q| (*q).clone()).ok_or_else(|| ServiceError::UnknownQuestion(q.clone())))
                    .collect::<Result<Vec<_>>>()?;
                *study.assignment_counts.entry(sequence_id.clone()).or_insert(0) += 1;
                study.participants.insert(participant_id.clone(), session_id.clone());
                let state = SessionState::new(participant_id, sequence_id, questions, &study.protocol);
                self.sessions.insert(
                    session_id.clone(),
                    SessionRecord {
                        id: session_id.clone(),
                        study_id: study_id.clone(),
                        started_at_ms: *at_ms,
                        last_event_ms: *at_ms,
                        state,
                        focus_losses: Vec::new(),
                    },
                );
            }
            LogEntry::Event { at_ms, session_id, event } => {
                let s = self.sessions.get_mut(session_id).ok_or_else(|| ServiceError::UnknownSession(session_id.clone()))?;
                s.state = s.state.advance(event, *at_ms)?;
                s.last_event_ms = *at_ms;
            }
            LogEntry::FocusLost { at_ms, session_id, detail } => {
                let s = self.sessions.get_mut(session_id).ok_or_else(|| ServiceError::UnknownSession(session_id.clone()))?;
                s.focus_losses.push((*at_ms, detail.clone()));
            }
        }
        self.applied += 1;
        Ok(())
    }
}

struct Persistence {
    log: BufWriter<File>,
    snapshot_path: PathBuf,
    snapshot_every: usize,
}

struct State {
    inner: Inner,
    entries: Vec<LogEntry>,
    persistence: Option<Persistence>,
}

/// Thread-safe survey backend. All mutations are serialized.
pub struct SurveyService {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
    media_prefix: String,
}

fn snapshot_path_for(log_path: &Path) -> PathBuf {
    let mut s = log_path.as_os_str().to_owned();
    s.push(".snapshot.json");
    PathBuf::from(s)
}

/// Reads a JSON-lines log.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ServiceError::BadLog { line: i + 1, source })?);
    }
    Ok(out)
}

impl SurveyService {
    /// In-memory service with no persistence.
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        SurveyService {
            state: Mutex::new(State { inner: Inner::default(), entries: Vec::new(), persistence: None }),
            clock,
            media_prefix: "/media".to_owned(),
        }
    }

    /// Rebuilds a service from log entries.
    pub fn from_log(entries: &[LogEntry], clock: Arc<dyn Clock>) -> Result<Self> {
        let svc = SurveyService::new(clock);
        {
            let mut st = svc.lock();
            for e in entries {
                st.inner.apply(e)?;
                st.entries.push(e.clone());
            }
        }
        Ok(svc)
    }

    /// Restores from a snapshot plus the log entries written after it.
    pub fn restore(snapshot: Snapshot, tail: &[LogEntry], clock: Arc<dyn Clock>) -> Result<Self> {
        let svc = SurveyService::new(clock);
        {
            let mut st = svc.lock();
            st.inner = snapshot.state;
            for e in tail {
                st.inner.apply(e)?;
                st.entries.push(e.clone());
            }
        }
        Ok(svc)
    }

    /// Opens (or creates) a persistent service backed by a JSON-lines log.
    /// A snapshot beside the log, if present, is loaded first.
    pub fn open(log_path: &Path, snapshot_every: usize, clock: Arc<dyn Clock>) -> Result<Self> {
        let entries = if log_path.exists() { read_log(log_path)? } else { Vec::new() };
        let snapshot_path = snapshot_path_for(log_path);
        let svc = match std::fs::read_to_string(&snapshot_path) {
            Ok(text) => {
                let snap: Snapshot = serde_json::from_str(&text).map_err(|source| ServiceError::BadLog { line: 0, source })?;
                let skip = snap.applied.min(entries.len());
                SurveyService::restore(snap, &entries[skip..], clock)?
            }
            Err(_) => SurveyService::from_log(&entries, clock)?,
        };
        let file = OpenOptions::new().create(true).append(true).open(log_path)?;
        svc.lock().persistence = Some(Persistence { log: BufWriter::new(file), snapshot_path, snapshot_every });
        Ok(svc)
    }

    pub fn with_media_prefix(mut self, prefix: &str) -> Self {
        self.media_prefix = prefix.trim_end_matches('/').to_owned();
        self
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    fn commit(st: &mut State, entry: LogEntry) -> Result<()> {
        st.inner.apply(&entry)?;
        if let Some(p) = st.persistence.as_mut() {
            serde_json::to_writer(&mut p.log, &entry).map_err(std::io::Error::from)?;
            p.log.write_all(b"\n")?;
            p.log.flush()?;
            if p.snapshot_every > 0 && st.inner.applied % p.snapshot_every == 0 {
                let snap = Snapshot { applied: st.inner.applied, state: st.inner.clone() };
                let tmp = p.snapshot_path.with_extension("tmp");
                std::fs::write(&tmp, serde_json::to_vec(&snap).map_err(std::io::Error::from)?)?;
                std::fs::rename(&tmp, &p.snapshot_path)?;
            }
        }
        st.entries.push(entry);
        Ok(())
    }

    pub fn log_entries(&self) -> Vec<LogEntry> {
        self.lock().entries.clone()
    }

    pub fn snapshot(&self) -> Snapshot {
        let st = self.lock();
        Snapshot { applied: st.inner.applied, state: st.inner.clone() }
    }

    pub fn study(&self, id: &str) -> Result<Study> {
        self.lock().inner.study(id).cloned()
    }

    pub fn session(&self, id: &str) -> Result<SessionRecord> {
        self.lock().inner.session(id).cloned()
    }

    /// Registers a draft study and returns its id.
    pub fn create_study(&self, req: CreateStudy) -> Result<String> {
        req.protocol.validate()?;
        let problems = req.study.validate();
        if !problems.is_empty() {
            return Err(ServiceError::InvalidStudy(problems));
        }
        let sequences = match req.sequences {
            Some(s) => s,
            None => {
                let group = req.protocol.targets_per_sequence;
                let targets = req.study.targets();
                if group == 0 || targets.len() % group != 0 {
                    return Err(ProtocolError::NonDivisibleTargets { n: targets.len(), group }.into());
                }
                build_sequences(&targets, &req.study.fillers(), targets.len() / group, group)?
            }
        };
        let mut st = self.lock();
        let id = req.id.unwrap_or_else(|| format!("study{:03}", st.inner.studies.len() + 1));
        let study = Study {
            assignment_counts: sequences.iter().map(|s| (s.id.clone(), 0)).collect(),
            id: id.clone(),
            protocol: req.protocol,
            definition: req.study,
            sequences,
            state: StudyState::Draft,
            assignment_cap: req.assignment_cap,
            seed: req.seed,
            participants: BTreeMap::new(),
        };
        let at_ms = self.clock.now_ms();
        Self::commit(&mut st, LogEntry::StudyCreated { at_ms, study: Box::new(study) })?;
        Ok(id)
    }

    pub fn open_study(&self, id: &str) -> Result<()> {
        let at_ms = self.clock.now_ms();
        Self::commit(&mut self.lock(), LogEntry::StudyOpened { at_ms, study_id: id.to_owned() })
    }

    pub fn close_study(&self, id: &str) -> Result<()> {
        let mut st = self.lock();
        st.inner.study(id)?;
        let at_ms = self.clock.now_ms();
        Self::commit(&mut st, LogEntry::StudyClosed { at_ms, study_id: id.to_owned() })
    }

    /// Starts a session on the least-assigned sequence (ties to the lowest id).
    pub fn assign_sequence(&self, study_id: &str, participant_id: &str) -> Result<Assignment> {
        let mut st = self.lock();
        let study = st.inner.study(study_id)?;
        if study.state != StudyState::Live {
            return Err(ServiceError::WrongState { id: study_id.to_owned(), state: study.state });
        }
        if study.participants.contains_key(participant_id) {
            return Err(ServiceError::RepeatParticipant(participant_id.to_owned()));
        }
        let (seq_id, count) = study
            .assignment_counts
            .iter()
            .min_by(|a, b| a.1.cmp(b.1).then_with(|| a.0.cmp(b.0)))
            .map(|(k, v)| (k.clone(), *v))
            .ok_or_else(|| ServiceError::InvalidStudy(vec!["study has no sequences".into()]))?;
        let sequence = study.sequences.iter().find(|s| s.id == seq_id).expect("counts track sequences").clone();
        let k = study.participants.len() as u64;
        let round = assemble_round(&sequence, &study.definition.questions, round_seed(study.seed, k), &study.protocol)?;
        let over_cap = count >= study.assignment_cap;
        let playlist = sequence
            .ordered_video_ids
            .iter()
            .map(|v| PlaylistItem {
                url: format!("{}/{v}.mp4", self.media_prefix),
                duration_s: study.definition.video(v).map_or(0.0, |x| x.duration_s),
                video_id: v.clone(),
            })
            .collect();
        let (rest_period_s, response_window_s) = (study.protocol.rest_period_s, study.protocol.response_window_s);
        let session_id = format!("sess{:05}", st.inner.sessions.len() + 1);
        let at_ms = self.clock.now_ms();
        Self::commit(
            &mut st,
            LogEntry::SessionStarted {
                at_ms,
                study_id: study_id.to_owned(),
                session_id: session_id.clone(),
                participant_id: participant_id.to_owned(),
                sequence_id: seq_id.clone(),
                question_ids: round.into_iter().map(|q| q.id).collect(),
            },
        )?;
        Ok(Assignment { session_id, sequence_id: seq_id, playlist, rest_period_s, response_window_s, over_cap })
    }

    /// Advances time-driven transitions and reports what to show next.
    ///
    /// During viewing, a call means the playlist has finished. An open
    /// question whose window plus grace has passed is closed as a timeout.
    pub fn next(&self, session_id: &str) -> Result<NextItem> {
        let mut st = self.lock();
        loop {
            let now = self.clock.now_ms();
            let rec = st.inner.session(session_id)?;
            let study = st.inner.study(&rec.study_id)?;
            let s = &rec.state;
            let event = match s.phase {
                SessionPhase::Done => return Ok(NextItem::Done),
                SessionPhase::Viewing => SessionEvent::ViewingDone,
                SessionPhase::Rest => {
                    let until = rec.last_event_ms + study.protocol.rest_ms();
                    if now < until {
                        return Ok(NextItem::Rest { remaining_ms: until - now });
                    }
                    SessionEvent::RestElapsed
                }
                SessionPhase::Recall => {
                    let i = s.current_question.expect("recall has a current question");
                    let q = &s.questions[i];
                    if s.flash_pending {
                        let flash_ms = study.protocol.flash_ms();
                        let item = NextItem::Flash {
                            index: i,
                            image_url: format!("{}/frames/{}.jpg", self.media_prefix, q.id),
                            flash_ms,
                            issued_at_ms: now + flash_ms,
                        };
                        let entry = LogEntry::Event {
                            at_ms: now + flash_ms,
                            session_id: session_id.to_owned(),
                            event: SessionEvent::FlashDone { question: i },
                        };
                        Self::commit(&mut st, entry)?;
                        return Ok(item);
                    }
                    let issued = s.issued_at[i].unwrap_or(now);
                    if now > issued + s.window_ms + GRACE_MS {
                        SessionEvent::WindowExpired { question: i }
                    } else {
                        return Ok(NextItem::Question {
                            index: i,
                            question_id: q.id.clone(),
                            text: q.text.clone(),
                            issued_at_ms: issued,
                            window_ms: s.window_ms,
                        });
                    }
                }
            };
            Self::commit(&mut st, LogEntry::Event { at_ms: now, session_id: session_id.to_owned(), event })?;
        }
    }

    /// Records an answer to the current question after re-checking the window.
    ///
    /// Past the window plus grace the answer is a timeout whatever the
    /// client reports. Otherwise the effective latency is the smaller of the
    /// client latency and the server-side elapsed time plus grace, and a
    /// latency over the window is again a timeout.
    pub fn record_response(&self, session_id: &str, question_id: &str, answer: Answer, client_latency_ms: u64) -> Result<ResponseRecord> {
        let mut st = self.lock();
        let now = self.clock.now_ms();
        let rec = st.inner.session(session_id)?;
        let s = &rec.state;
        let index = s
            .questions
            .iter()
            .position(|q| q.id == question_id)
            .ok_or_else(|| ServiceError::UnknownQuestion(question_id.to_owned()))?;
        let window = s.window_ms;
        let event = match (s.phase, s.current_question) {
            (SessionPhase::Recall, Some(cur)) if cur == index && !s.flash_pending => {
                let issued = s.issued_at[index].unwrap_or(now);
                let elapsed = now.saturating_sub(issued);
                let effective = client_latency_ms.min(elapsed + GRACE_MS);
                if elapsed > window + GRACE_MS || effective > window || answer == Answer::Timeout {
                    SessionEvent::Answer { question: index, answer: Answer::Timeout, latency_ms: window }
                } else {
                    SessionEvent::Answer { question: index, answer, latency_ms: effective }
                }
            }
            // let the state machine name the violation
            _ => SessionEvent::Answer { question: index, answer, latency_ms: client_latency_ms },
        };
        Self::commit(&mut st, LogEntry::Event { at_ms: now, session_id: session_id.to_owned(), event })?;
        let rec = st.inner.session(session_id)?;
        Ok(rec.state.records.last().expect("answer recorded").clone())
    }

    /// Logs a focus-loss report from the client; it has no effect on scoring.
    pub fn record_focus_loss(&self, session_id: &str, detail: Option<String>) -> Result<()> {
        let mut st = self.lock();
        st.inner.session(session_id)?;
        let at_ms = self.clock.now_ms();
        Self::commit(&mut st, LogEntry::FocusLost { at_ms, session_id: session_id.to_owned(), detail })
    }

    /// Response logs of the study's finished sessions.
    pub fn completed_logs(&self, study_id: &str) -> Result<Vec<ParticipantLog>> {
        let st = self.lock();
        st.inner.study(study_id)?;
        Ok(st
            .inner
            .sessions
            .values()
            .filter(|s| s.study_id == study_id && s.state.is_done())
            .map(|s| ParticipantLog {
                participant_id: s.state.participant_id.clone(),
                sequence_id: s.state.sequence_id.clone(),
                records: s.state.records.clone(),
            })
            .collect())
    }

    pub fn study_report(&self, study_id: &str) -> Result<ScoreReport> {
        let logs = self.completed_logs(study_id)?;
        if logs.is_empty() {
            return Err(ServiceError::NoCompletedSessions);
        }
        let study = self.study(study_id)?;
        let cfg = ScoringConfig { window_s: study.protocol.response_window_s, ..ScoringConfig::default() };
        Ok(compute_scores(&study.definition.questions, &logs, &cfg)?)
    }

    pub fn study_scores(&self, study_id: &str) -> Result<Vec<MemorabilityScore>> {
        Ok(self.study_report(study_id)?.scores)
    }

    pub fn scores_csv(&self, study_id: &str) -> Result<String> {
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &self.study_scores(study_id)?)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }
}
