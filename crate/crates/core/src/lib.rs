//! Video memorability measurement and prediction.
//!
//! The crate covers the full pipeline: a timed recall survey (sequence
//! construction, question rounds, session state machine), memorability
//! scoring from response latencies, colour/saliency feature extraction,
//! random-forest regression with late fusion, and memorability-aware
//! budgeted video summarization with supervised weight learning.
//!
//! A synthetic study simulator and brute-force oracles live in
//! [`simulator`] so the whole pipeline can be exercised without crowd data.

pub mod evaluation;
pub mod features;
pub mod model;
pub mod protocol;
pub mod regression;
pub mod rng;
pub mod scoring;
pub mod service;
pub mod simulator;
pub mod summarizer;

pub use evaluation::{OverlapScore, ReferenceSummary, RougeScore, SummarySelection};
pub use features::{FeatureChannel, FrameImage, GrayMap};
pub use model::{
    Answer, Category, MemorabilityScore, Question, QuestionKind, ResponseRecord, Segment, Sequence,
    StudyDefinition, VideoItem, VideoRole,
};
pub use protocol::{ProtocolConfig, ProtocolVariant, SessionEvent, SessionPhase, SessionState};
pub use regression::{FeatureSubset, ForestConfig, ForestModel};
pub use scoring::{ParticipantLog, ParticipantStats, ScoreReport};
pub use service::{Clock, ManualClock, SurveyService, SystemClock};
pub use summarizer::{Budget, ObjectiveKind, SummaryProblem};
