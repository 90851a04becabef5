use std::collections::BTreeSet;
use std::sync::Arc;

use tutorlink_core::alerts::{AlertKind, TelemetryKind};
use tutorlink_core::clock::{Clock, ManualClock};
use tutorlink_core::eventlog::{fold_roster, Category, EventLog, LifecycleEvent, LogFilter, MemoryStore};
use tutorlink_core::hub::{Hub, HubConfig, RecordingOutbox};
use tutorlink_core::protocol::{AvatarBody, ChatTarget, Payload, PeerId, QualityRequest, Role, SessionId, TelemetryBody};
use tutorlink_core::quality::TierName;
use tutorlink_core::signaling::{PairingState, Transition};

const HINT: &str = "To solve for k, first try isolating k on one side of the equation.";

struct Fixture {
    hub: Hub,
    clock: Arc<ManualClock>,
    outbox: Arc<RecordingOutbox>,
    sid: SessionId,
    tutor_token: String,
}

fn fixture() -> Fixture {
    let clock = Arc::new(ManualClock::new(1_000_000));
    let outbox = Arc::new(RecordingOutbox::default());
    let log = Arc::new(EventLog::new(Arc::new(MemoryStore::default())));
    let hub = Hub::new(HubConfig::default(), clock.clone(), log, outbox.clone());
    let (sid, token) = hub.create_session("Ms. Lee").unwrap();
    Fixture {
        hub,
        clock,
        outbox,
        sid,
        tutor_token: token.as_str().to_owned(),
    }
}

impl Fixture {
    fn tutor(&self) -> PeerId {
        self.hub.connect(&self.sid, &self.tutor_token).unwrap().join.peer
    }

    fn student(&self, alias: &str) -> PeerId {
        let j = self.hub.join(&self.sid, alias, Role::Student, None).unwrap();
        self.hub.connect(&self.sid, j.token.as_str()).unwrap();
        j.peer
    }

    fn pair(&self, tutor: &PeerId, student: &PeerId) {
        self.hub.relay_offer(&self.sid, student, tutor, "offer".into()).unwrap();
        self.hub.relay_answer(&self.sid, tutor, student, "answer".into()).unwrap();
    }

    fn records(&self, category: Category) -> Vec<tutorlink_core::eventlog::LogRecord> {
        let filter = LogFilter {
            categories: Some(vec![category]),
            ..Default::default()
        };
        self.hub.query(&self.sid, &filter).unwrap()
    }

    fn telemetry(&self, student: &PeerId, activity: TelemetryKind) {
        let ts = self.clock.now_ms();
        self.hub
            .ingest(&self.sid, student, TelemetryBody { activity, ts })
            .unwrap();
    }
}

#[test]
fn handshake_reaches_connected_and_is_logged() {
    let f = fixture();
    let t = f.tutor();
    let s = f.student("Anonymous");
    let to_student = f.outbox.take_for(&s);
    assert!(to_student.iter().any(|d| matches!(
        d.payload,
        Payload::QualityRequest(QualityRequest::Tier { tier: TierName::Low, .. })
    )));
    f.pair(&t, &s);
    assert_eq!(f.hub.pairing_state(&f.sid, &s).unwrap(), Some(PairingState::Connected));
    let states: Vec<PairingState> = f
        .records(Category::Signal)
        .iter()
        .filter_map(|r| r.body_as::<Transition>())
        .map(|t| t.to)
        .collect();
    assert_eq!(states, vec![PairingState::OfferPending, PairingState::Connected]);
}

#[test]
fn candidates_before_offer_are_released_in_send_order() {
    let f = fixture();
    let t = f.tutor();
    let s = f.student("A");
    f.outbox.take();
    f.hub.relay_candidate(&f.sid, &s, &t, "c1".into()).unwrap();
    f.hub.relay_candidate(&f.sid, &s, &t, "c2".into()).unwrap();
    assert_eq!(f.hub.retained_signal_bytes(&f.sid).unwrap(), 4);
    assert!(f.outbox.take_for(&t).is_empty());
    f.hub.relay_offer(&f.sid, &s, &t, "o".into()).unwrap();
    let kinds: Vec<String> = f
        .outbox
        .take_for(&t)
        .into_iter()
        .map(|d| match d.payload {
            Payload::Offer(b) => b.sdp,
            Payload::IceCandidate(b) => b.candidate,
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    assert_eq!(kinds, vec!["c1", "c2", "o"]);
    assert_eq!(f.hub.retained_signal_bytes(&f.sid).unwrap(), 0);
}

#[test]
fn answer_from_student_is_a_logged_violation() {
    let f = fixture();
    let t = f.tutor();
    let s = f.student("A");
    f.hub.relay_offer(&f.sid, &s, &t, "o".into()).unwrap();
    let err = f.hub.relay_answer(&f.sid, &s, &t, "a".into()).unwrap_err();
    assert_eq!(err.code(), "role_violation");
    let violations = f
        .records(Category::Lifecycle)
        .iter()
        .filter(|r| matches!(r.body_as::<LifecycleEvent>(), Some(LifecycleEvent::ProtocolViolation { .. })))
        .count();
    assert_eq!(violations, 1);
}

#[test]
fn zoom_renegotiates_changed_feeds() {
    let f = fixture();
    let t = f.tutor();
    let a = f.student("A");
    let b = f.student("B");
    f.pair(&t, &a);
    f.pair(&t, &b);
    f.outbox.take();

    let alloc = f.hub.set_zoom(&f.sid, &t, Some(b.clone())).unwrap();
    assert_eq!(alloc.tier_of(&b), Some(TierName::High));
    assert_eq!(alloc.tier_of(&a), Some(TierName::Low));
    assert_eq!(f.hub.pairing_state(&f.sid, &b).unwrap(), Some(PairingState::Renegotiating));
    assert_eq!(f.hub.pairing_state(&f.sid, &a).unwrap(), Some(PairingState::Connected));

    f.pair(&t, &b);
    assert_eq!(f.hub.pairing_tier(&f.sid, &b).unwrap(), Some(TierName::High));

    // moving the zoom renegotiates both feeds
    let before = f.records(Category::Signal).len();
    f.hub.set_zoom(&f.sid, &t, Some(a.clone())).unwrap();
    let renegotiations = f.records(Category::Signal)[before..]
        .iter()
        .filter_map(|r| r.body_as::<Transition>())
        .filter(|t| t.to == PairingState::Renegotiating)
        .count();
    assert_eq!(renegotiations, 2);

    let err = f.hub.set_zoom(&f.sid, &t, Some(PeerId::new("nobody"))).unwrap_err();
    assert_eq!(err.code(), "zoom_target_not_in_feeds");
    assert_eq!(f.hub.allocation(&f.sid).unwrap().tier_of(&a), Some(TierName::High));
}

#[test]
fn repeated_incorrect_then_hint_with_wave() {
    let f = fixture();
    let t = f.tutor();
    let s = f.student("Student X");
    f.outbox.take();
    for _ in 0..3 {
        f.clock.advance(20_000);
        f.telemetry(&s, TelemetryKind::AnswerSubmitted { correct: false });
    }
    let alerts: Vec<_> = f
        .outbox
        .take_for(&t)
        .into_iter()
        .filter_map(|d| match d.payload {
            Payload::Alert(a) => Some(a),
            _ => None,
        })
        .collect();
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0].alert.kind, AlertKind::RepeatedIncorrect { count: 3, window_secs: 300 });
    assert_eq!(alerts[0].text, "Student X submitted 3 incorrect answers in the last 5 minutes");

    let before = f.hub.query(&f.sid, &LogFilter::default()).unwrap().len();
    let cmd = f.hub.dispatch(&f.sid, &t, &s, HINT, true).unwrap();
    assert!(cmd.attention_wave);
    let after = f.hub.query(&f.sid, &LogFilter::default()).unwrap();
    let cats: Vec<Category> = after[before..].iter().map(|r| r.category).collect();
    assert_eq!(cats, vec![Category::AvatarCommand, Category::Chat]);

    let got = f.outbox.take_for(&s);
    assert!(matches!(&got[..], [d] if matches!(&d.payload, Payload::AvatarCommand(AvatarBody::Play(c)) if c.attention_wave && c.speech_text == HINT)));

    // a second dispatch within 30 s does not wave
    f.clock.advance(10_000);
    assert!(!f.hub.dispatch(&f.sid, &t, &s, "Nice work!", false).unwrap().attention_wave);
    f.clock.advance(30_000);
    assert!(f.hub.dispatch(&f.sid, &t, &s, "Still there?", false).unwrap().attention_wave);

    let transcript = f.hub.transcript(&f.sid, &s).unwrap();
    assert_eq!(transcript.len(), 6);
}

#[test]
fn inactivity_alert_via_tick() {
    let f = fixture();
    let t = f.tutor();
    let s = f.student("Student X");
    f.outbox.take();
    f.clock.advance(119_000);
    // heartbeats keep the peer present but are not activity
    f.hub.heartbeat(&f.sid, &s).unwrap();
    f.hub.heartbeat(&f.sid, &t).unwrap();
    assert!(f.hub.tick().is_empty());
    f.clock.advance(1_000);
    let raised = f.hub.tick();
    assert_eq!(raised.len(), 1);
    assert_eq!(raised[0].kind, AlertKind::Inactivity { duration_secs: 120 });
    assert!(f.hub.tick().is_empty());
    let texts: Vec<String> = f
        .outbox
        .take_for(&t)
        .into_iter()
        .filter_map(|d| match d.payload {
            Payload::Alert(a) => Some(a.text),
            _ => None,
        })
        .collect();
    assert_eq!(texts, vec!["Student X was inactive for 2 minutes"]);

    f.telemetry(&s, TelemetryKind::KeyInput);
    assert!(f.hub.open_alerts(&f.sid).unwrap().is_empty());
}

#[test]
fn silent_peers_are_dropped() {
    let f = fixture();
    let t = f.tutor();
    let s = f.student("A");
    f.clock.advance(45_000);
    f.hub.heartbeat(&f.sid, &t).unwrap();
    assert_eq!(
        f.hub.presence(&f.sid, &s).unwrap().status,
        tutorlink_core::protocol::PresenceStatus::Stale
    );
    f.clock.advance(45_000);
    f.hub.tick();
    let roster = f.hub.roster(&f.sid).unwrap();
    assert_eq!(roster.iter().map(|e| e.peer.clone()).collect::<Vec<_>>(), vec![t]);
}

#[test]
fn chat_rules() {
    let f = fixture();
    let t = f.tutor();
    let a = f.student("A");
    let b = f.student("B");
    f.outbox.take();
    f.hub.chat(&f.sid, &t, ChatTarget::Broadcast, "hello class").unwrap();
    assert_eq!(f.outbox.take().len(), 2);
    f.hub.chat(&f.sid, &a, ChatTarget::Peer(t.clone()), "help").unwrap();
    assert_eq!(f.outbox.take_for(&t).len(), 1);
    assert_eq!(
        f.hub.chat(&f.sid, &a, ChatTarget::Peer(b.clone()), "psst").unwrap_err().code(),
        "role_violation"
    );
    assert_eq!(f.hub.chat(&f.sid, &t, ChatTarget::Broadcast, "  ").unwrap_err().code(), "empty_text");
    let long = "x".repeat(2001);
    assert_eq!(f.hub.chat(&f.sid, &t, ChatTarget::Broadcast, &long).unwrap_err().code(), "text_too_long");
    assert_eq!(f.records(Category::Chat).len(), 2);
    assert_eq!(f.hub.transcript(&f.sid, &b).unwrap().len(), 1);
    assert_eq!(
        f.hub.transcript(&f.sid, &PeerId::new("ghost")).unwrap_err().code(),
        "unknown_peer"
    );
}

#[test]
fn tutor_leave_tears_down_pairings_and_keeps_session_open() {
    let f = fixture();
    let t = f.tutor();
    let s = f.student("A");
    f.pair(&t, &s);
    f.hub.leave(&f.sid, &t, "left").unwrap();
    assert!(f.hub.is_open(&f.sid).unwrap());
    assert_eq!(f.hub.pairing_state(&f.sid, &s).unwrap(), Some(PairingState::Closed));
    // the tutor can sit down again and pairings restart
    let t2 = f.tutor();
    assert_eq!(t2, t);
    assert_eq!(f.hub.pairing_state(&f.sid, &s).unwrap(), Some(PairingState::Idle));
}

#[test]
fn stale_socket_disconnect_is_ignored_after_takeover() {
    let f = fixture();
    let first = f.hub.connect(&f.sid, &f.tutor_token).unwrap();
    let s = f.student("A");
    let second = f.hub.connect(&f.sid, &f.tutor_token).unwrap();
    assert_eq!(second.replaced, Some(first.id));
    f.hub.disconnect(&f.sid, &first.join.peer, first.id).unwrap();
    assert_eq!(f.hub.pairing_state(&f.sid, &s).unwrap(), Some(PairingState::Idle));
    f.hub.disconnect(&f.sid, &second.join.peer, second.id).unwrap();
    assert_eq!(f.hub.pairing_state(&f.sid, &s).unwrap(), Some(PairingState::Closed));
}

#[test]
fn close_is_idempotent_and_blocks_joins() {
    let f = fixture();
    let _t = f.tutor();
    let s = f.student("A");
    let student_token = f.hub.join(&f.sid, "B", Role::Student, None).unwrap().token;
    assert_eq!(
        f.hub.close_session(&f.sid, student_token.as_str()).unwrap_err().code(),
        "invalid_token"
    );
    let first = f.hub.close_session(&f.sid, &f.tutor_token).unwrap();
    assert!(!first.already_closed);
    let second = f.hub.close_session(&f.sid, &f.tutor_token).unwrap();
    assert!(second.already_closed);
    assert_eq!(first.records, second.records);
    assert_eq!(
        f.hub.join(&f.sid, "C", Role::Student, None).unwrap_err().code(),
        "session_closed"
    );
    assert_eq!(
        f.hub.chat(&f.sid, &s, ChatTarget::Broadcast, "hi").unwrap_err().code(),
        "session_closed"
    );
}

#[test]
fn roster_matches_log_fold_after_churn() {
    let f = fixture();
    let t = f.tutor();
    let mut shadow = BTreeSet::from([t.clone()]);
    let mut peers = Vec::new();
    for i in 0..25 {
        let j = f.hub.join(&f.sid, &format!("S{i}"), Role::Student, None).unwrap();
        let snapshot: BTreeSet<PeerId> = j.roster.iter().map(|e| e.peer.clone()).collect();
        shadow.insert(j.peer.clone());
        assert_eq!(snapshot, shadow);
        peers.push(j.peer);
    }
    for p in peers.iter().step_by(3) {
        f.hub.leave(&f.sid, p, "closed tab").unwrap();
        shadow.remove(p);
    }
    let log = f.hub.query(&f.sid, &LogFilter::default()).unwrap();
    let folded: BTreeSet<PeerId> = fold_roster(&log).into_keys().collect();
    let live: BTreeSet<PeerId> = f.hub.roster(&f.sid).unwrap().into_iter().map(|e| e.peer).collect();
    assert_eq!(folded, shadow);
    assert_eq!(live, shadow);
}

#[test]
fn sessions_are_isolated() {
    let f = fixture();
    let (other, other_token) = f.hub.create_session("Mr. Kim").unwrap();
    let t = f.tutor();
    let s = f.student("A");
    let t2 = f.hub.connect(&other, other_token.as_str()).unwrap().join.peer;
    f.outbox.take();
    // same peer ids exist in both sessions but traffic never crosses
    f.hub.chat(&f.sid, &t, ChatTarget::Broadcast, "hello").unwrap();
    assert!(f.outbox.take().iter().all(|(sid, _)| *sid == f.sid));
    assert_eq!(t, t2);
    assert_eq!(
        f.hub.relay_offer(&other, &s, &t2, "o".into()).unwrap_err().code(),
        "unknown_peer"
    );
}
