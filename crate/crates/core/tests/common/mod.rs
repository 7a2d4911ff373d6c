#![allow(dead_code)]

use std::sync::Arc;

use memscore::protocol::SessionEvent;
use memscore::service::{CreateStudy, GRACE_MS};
use memscore::simulator::StudyBundle;
use memscore::{ManualClock, SurveyService};

pub const START_MS: u64 = 1_000_000;

/// Plays every simulated session through a live service, one participant
/// after another, with the clock set to each event's time.
pub fn drive_service(bundle: &StudyBundle, seed: u64) -> (SurveyService, String, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(START_MS));
    let service = SurveyService::new(clock.clone());
    let study_id = service
        .create_study(CreateStudy {
            id: None,
            protocol: bundle.protocol.clone(),
            study: bundle.study.clone(),
            sequences: Some(bundle.sequences.clone()),
            assignment_cap: usize::MAX,
            seed,
        })
        .unwrap();
    service.open_study(&study_id).unwrap();
    play_sessions(&service, &clock, &study_id, bundle, 0..bundle.sessions.len());
    (service, study_id, clock)
}

/// Plays the sessions with indices in `range`; the clock keeps moving forward.
pub fn play_sessions(
    service: &SurveyService,
    clock: &ManualClock,
    study_id: &str,
    bundle: &StudyBundle,
    range: std::ops::Range<usize>,
) {
    let flash_ms = bundle.protocol.flash_ms();
    for log in &bundle.sessions[range] {
        let base = service.now_ms() + 1000;
        clock.set(base);
        let a = service.assign_sequence(study_id, &log.participant_id).unwrap();
        assert_eq!(a.sequence_id, log.sequence_id, "assignment order differs from simulator");
        let mut shift = 0;
        for e in &log.events {
            let at = base + shift + e.at_ms;
            match &e.event {
                SessionEvent::ViewingDone | SessionEvent::RestElapsed => {
                    clock.set(at);
                    service.next(&a.session_id).unwrap();
                }
                SessionEvent::FlashDone { .. } => {
                    if service.session(&a.session_id).unwrap().state.flash_pending {
                        clock.set(at - flash_ms);
                        service.next(&a.session_id).unwrap();
                    }
                }
                SessionEvent::Answer { question, answer, latency_ms } => {
                    clock.set(at);
                    let qid = &log.question_ids[*question];
                    service.record_response(&a.session_id, qid, *answer, *latency_ms).unwrap();
                }
                SessionEvent::WindowExpired { .. } => {
                    clock.set(at + GRACE_MS + 1);
                    shift += GRACE_MS + 1;
                    service.next(&a.session_id).unwrap();
                }
            }
        }
        assert!(service.session(&a.session_id).unwrap().state.is_done());
    }
}
