//! proptest strategies for wire values.

use proptest::collection::vec;
use proptest::option;
use proptest::prelude::*;

use tutorlink_core::alerts::{Alert, AlertKind, TelemetryKind};
use tutorlink_core::avatar::{build_timeline, AvatarCommand, Gesture};
use tutorlink_core::protocol::{
    AlertBody, AvatarBody, CandidateBody, ChatBody, ChatTarget, DispatchRequest, Envelope, ErrorBody, HeartbeatBody,
    JoinAckBody, JoinBody, LeaveBody, MessageKind, Payload, PeerId, PresenceStatus, QualityRequest, Role, RosterBody,
    RosterEntry, SdpBody, SessionId, TelemetryBody, MAX_CHAT_CHARS,
};
use tutorlink_core::quality::TierName;

pub fn peer() -> impl Strategy<Value = PeerId> {
    prop_oneof![Just("tutor".to_owned()), "s[0-9]{4}", "[a-zA-Z0-9_-]{1,12}"].prop_map(PeerId::new)
}

pub fn session() -> impl Strategy<Value = SessionId> {
    "[0-9a-f]{32}".prop_map(SessionId::new)
}

/// Arbitrary unicode, including quotes, escapes and astral characters.
pub fn any_text(max_chars: usize) -> impl Strategy<Value = String> {
    vec(any::<char>(), 0..=max_chars).prop_map(|cs| cs.into_iter().collect())
}

/// Valid chat text: 1..=2000 characters, mostly short.
pub fn chat_text() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => vec(any::<char>(), 1..=80),
        1 => vec(any::<char>(), MAX_CHAT_CHARS - 5..=MAX_CHAT_CHARS),
    ]
    .prop_map(|cs| cs.into_iter().collect())
}

fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::Tutor), Just(Role::Student)]
}

fn tier() -> impl Strategy<Value = TierName> {
    proptest::sample::select(TierName::ALL.to_vec())
}

fn status() -> impl Strategy<Value = PresenceStatus> {
    prop_oneof![
        Just(PresenceStatus::Connected),
        Just(PresenceStatus::Stale),
        Just(PresenceStatus::Disconnected)
    ]
}

fn roster() -> impl Strategy<Value = Vec<RosterEntry>> {
    vec(
        (peer(), any_text(16), role(), status()).prop_map(|(peer, alias, role, status)| RosterEntry {
            peer,
            alias,
            role,
            status,
        }),
        0..6,
    )
}

pub fn telemetry_kind() -> impl Strategy<Value = TelemetryKind> {
    prop_oneof![
        Just(TelemetryKind::MouseClick),
        Just(TelemetryKind::KeyInput),
        any::<bool>().prop_map(|correct| TelemetryKind::AnswerSubmitted { correct }),
        Just(TelemetryKind::Heartbeat),
    ]
}

fn alert() -> impl Strategy<Value = Alert> {
    let kind = prop_oneof![
        any::<u32>().prop_map(|d| AlertKind::Inactivity { duration_secs: d as u64 }),
        (any::<u32>(), any::<u32>()).prop_map(|(count, w)| AlertKind::RepeatedIncorrect {
            count,
            window_secs: w as u64
        }),
    ];
    (peer(), kind, any::<u64>(), option::of(any::<u64>())).prop_map(|(student, kind, raised_at, cleared_at)| Alert {
        student,
        kind,
        raised_at,
        cleared_at,
    })
}

fn gesture() -> impl Strategy<Value = Gesture> {
    prop_oneof![
        Just(Gesture::Wave),
        Just(Gesture::Nod),
        Just(Gesture::ThumbsUp),
        Just(Gesture::None)
    ]
}

fn avatar_command() -> impl Strategy<Value = AvatarCommand> {
    (peer(), chat_text(), any::<bool>(), gesture(), any::<bool>(), 0.25f64..4.0).prop_map(
        |(target, speech_text, show_bubble, gesture, attention_wave, rate)| AvatarCommand {
            target,
            timeline: build_timeline(&speech_text, rate).expect("rate is positive"),
            speech_text,
            show_bubble,
            gesture,
            attention_wave,
        },
    )
}

/// A valid payload of the given kind.
pub fn payload_of(kind: MessageKind) -> BoxedStrategy<Payload> {
    match kind {
        MessageKind::Join => (any_text(64), role())
            .prop_map(|(alias, role)| Payload::Join(JoinBody { alias, role }))
            .boxed(),
        MessageKind::JoinAck => (peer(), role(), roster(), vec("stun:[a-z.]{1,20}:[0-9]{2,5}", 0..3))
            .prop_map(|(peer, role, roster, ice_servers)| {
                Payload::JoinAck(JoinAckBody {
                    peer,
                    role,
                    roster,
                    ice_servers,
                })
            })
            .boxed(),
        MessageKind::Leave => (option::of(peer()), option::of(any_text(40)))
            .prop_map(|(peer, reason)| Payload::Leave(LeaveBody { peer, reason }))
            .boxed(),
        MessageKind::RosterUpdate => roster().prop_map(|roster| Payload::RosterUpdate(RosterBody { roster })).boxed(),
        MessageKind::Offer => (peer(), any_text(300))
            .prop_map(|(to, sdp)| Payload::Offer(SdpBody { to, sdp }))
            .boxed(),
        MessageKind::Answer => (peer(), any_text(300))
            .prop_map(|(to, sdp)| Payload::Answer(SdpBody { to, sdp }))
            .boxed(),
        MessageKind::IceCandidate => (peer(), any_text(120))
            .prop_map(|(to, candidate)| Payload::IceCandidate(CandidateBody { to, candidate }))
            .boxed(),
        MessageKind::QualityRequest => prop_oneof![
            option::of(peer()).prop_map(|target| QualityRequest::Zoom { target }),
            (peer(), tier()).prop_map(|(to, tier)| QualityRequest::Tier { to, tier }),
        ]
        .prop_map(Payload::QualityRequest)
        .boxed(),
        MessageKind::Chat => {
            let to = prop_oneof![Just(ChatTarget::Broadcast), peer().prop_map(ChatTarget::Peer)];
            (peer(), to, chat_text())
                .prop_map(|(from, to, text)| Payload::Chat(ChatBody { from, to, text }))
                .boxed()
        }
        MessageKind::AvatarCommand => prop_oneof![
            (peer(), chat_text(), any::<bool>()).prop_map(|(target, text, show_bubble)| {
                AvatarBody::Dispatch(DispatchRequest {
                    target,
                    text,
                    show_bubble,
                })
            }),
            avatar_command().prop_map(AvatarBody::Play),
        ]
        .prop_map(Payload::AvatarCommand)
        .boxed(),
        MessageKind::Telemetry => (telemetry_kind(), any::<u64>())
            .prop_map(|(activity, ts)| Payload::Telemetry(TelemetryBody { activity, ts }))
            .boxed(),
        MessageKind::Alert => (alert(), any_text(80))
            .prop_map(|(alert, text)| Payload::Alert(AlertBody { alert, text }))
            .boxed(),
        MessageKind::Heartbeat => Just(Payload::Heartbeat(HeartbeatBody {})).boxed(),
        MessageKind::Error => ("[a-z_]{1,24}", any_text(80))
            .prop_map(|(code, reason)| Payload::Error(ErrorBody { code, reason }))
            .boxed(),
    }
}

pub fn kind() -> impl Strategy<Value = MessageKind> {
    proptest::sample::select(MessageKind::ALL.to_vec())
}

pub fn payload() -> impl Strategy<Value = Payload> {
    kind().prop_flat_map(payload_of)
}

pub fn envelope_of(kind: MessageKind) -> impl Strategy<Value = Envelope> {
    (1..=u64::MAX, any::<u64>(), session(), peer(), payload_of(kind))
        .prop_map(|(seq, ts, session, sender, payload)| Envelope::new(seq, ts, session, sender, payload))
}

/// Valid envelopes over every message kind.
pub fn envelope() -> impl Strategy<Value = Envelope> {
    kind().prop_flat_map(envelope_of)
}
