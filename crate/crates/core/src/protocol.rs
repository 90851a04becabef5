//! Wire messages exchanged between the gateway, the synthetic harness and the
//! browser clients.
//!
//! Every frame is a single JSON object with a fixed field order:
//! `v, seq, ts, session, sender, type, payload`. The payload layout depends on
//! `type`. Encoding is canonical, so `encode(decode(encode(e)))` reproduces the
//! same bytes.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::alerts::{Alert, TelemetryKind};
use crate::avatar::AvatarCommand;
use crate::quality::TierName;

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on chat text, counted in characters.
pub const MAX_CHAT_CHARS: usize = 2000;

/// Sender id used for envelopes the gateway itself originates.
pub const SERVER_SENDER: &str = "server";

const BROADCAST_MARKER: &str = "*";

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(String);

impl PeerId {
    pub fn new(id: impl Into<String>) -> Self {
        PeerId(id.into())
    }

    pub fn server() -> Self {
        PeerId(SERVER_SENDER.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PeerId {
    fn from(s: &str) -> Self {
        PeerId(s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn new(id: impl Into<String>) -> Self {
        SessionId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        SessionId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tutor,
    Student,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Tutor => "tutor",
            Role::Student => "student",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Join,
    JoinAck,
    Leave,
    RosterUpdate,
    Offer,
    Answer,
    IceCandidate,
    QualityRequest,
    Chat,
    AvatarCommand,
    Telemetry,
    Alert,
    Heartbeat,
    Error,
}

impl MessageKind {
    pub const ALL: [MessageKind; 14] = [
        MessageKind::Join,
        MessageKind::JoinAck,
        MessageKind::Leave,
        MessageKind::RosterUpdate,
        MessageKind::Offer,
        MessageKind::Answer,
        MessageKind::IceCandidate,
        MessageKind::QualityRequest,
        MessageKind::Chat,
        MessageKind::AvatarCommand,
        MessageKind::Telemetry,
        MessageKind::Alert,
        MessageKind::Heartbeat,
        MessageKind::Error,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            MessageKind::Join => "join",
            MessageKind::JoinAck => "join_ack",
            MessageKind::Leave => "leave",
            MessageKind::RosterUpdate => "roster_update",
            MessageKind::Offer => "offer",
            MessageKind::Answer => "answer",
            MessageKind::IceCandidate => "ice_candidate",
            MessageKind::QualityRequest => "quality_request",
            MessageKind::Chat => "chat",
            MessageKind::AvatarCommand => "avatar_command",
            MessageKind::Telemetry => "telemetry",
            MessageKind::Alert => "alert",
            MessageKind::Heartbeat => "heartbeat",
            MessageKind::Error => "error",
        }
    }

    pub fn from_wire(name: &str) -> Option<MessageKind> {
        MessageKind::ALL
            .into_iter()
            .find(|kind| kind.wire_name() == name)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// Recipient of a chat line: one peer, or every student in the session.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum ChatTarget {
    Peer(PeerId),
    Broadcast,
}

impl ChatTarget {
    pub fn includes(&self, peer: &PeerId) -> bool {
        match self {
            ChatTarget::Peer(p) => p == peer,
            ChatTarget::Broadcast => true,
        }
    }
}

impl From<String> for ChatTarget {
    fn from(s: String) -> Self {
        if s == BROADCAST_MARKER {
            ChatTarget::Broadcast
        } else {
            ChatTarget::Peer(PeerId(s))
        }
    }
}

impl From<ChatTarget> for String {
    fn from(t: ChatTarget) -> Self {
        match t {
            ChatTarget::Peer(p) => p.0,
            ChatTarget::Broadcast => BROADCAST_MARKER.to_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresenceStatus {
    Connected,
    Stale,
    Disconnected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub peer: PeerId,
    pub alias: String,
    pub role: Role,
    pub status: PresenceStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinBody {
    pub alias: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinAckBody {
    pub peer: PeerId,
    pub role: Role,
    pub roster: Vec<RosterEntry>,
    pub ice_servers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaveBody {
    pub peer: Option<PeerId>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterBody {
    pub roster: Vec<RosterEntry>,
}

/// Offer or answer: an opaque session description addressed to one peer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdpBody {
    pub to: PeerId,
    pub sdp: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateBody {
    pub to: PeerId,
    pub candidate: String,
}

/// `zoom` comes from the tutor dashboard and names the enlarged feed (or none).
/// `tier` asks one student to re-encode at the given tier; the tutor may send
/// it directly and the gateway sends it on allocation changes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum QualityRequest {
    Zoom { target: Option<PeerId> },
    Tier { to: PeerId, tier: TierName },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatBody {
    pub from: PeerId,
    pub to: ChatTarget,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchRequest {
    pub target: PeerId,
    pub text: String,
    pub show_bubble: bool,
}

/// Tutor → gateway carries a `dispatch` request; gateway → student carries the
/// composed command under `play`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AvatarBody {
    Dispatch(DispatchRequest),
    Play(AvatarCommand),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryBody {
    pub activity: TelemetryKind,
    pub ts: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertBody {
    pub alert: Alert,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeartbeatBody {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Join(JoinBody),
    JoinAck(JoinAckBody),
    Leave(LeaveBody),
    RosterUpdate(RosterBody),
    Offer(SdpBody),
    Answer(SdpBody),
    IceCandidate(CandidateBody),
    QualityRequest(QualityRequest),
    Chat(ChatBody),
    AvatarCommand(AvatarBody),
    Telemetry(TelemetryBody),
    Alert(AlertBody),
    Heartbeat(HeartbeatBody),
    Error(ErrorBody),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Join(_) => MessageKind::Join,
            Payload::JoinAck(_) => MessageKind::JoinAck,
            Payload::Leave(_) => MessageKind::Leave,
            Payload::RosterUpdate(_) => MessageKind::RosterUpdate,
            Payload::Offer(_) => MessageKind::Offer,
            Payload::Answer(_) => MessageKind::Answer,
            Payload::IceCandidate(_) => MessageKind::IceCandidate,
            Payload::QualityRequest(_) => MessageKind::QualityRequest,
            Payload::Chat(_) => MessageKind::Chat,
            Payload::AvatarCommand(_) => MessageKind::AvatarCommand,
            Payload::Telemetry(_) => MessageKind::Telemetry,
            Payload::Alert(_) => MessageKind::Alert,
            Payload::Heartbeat(_) => MessageKind::Heartbeat,
            Payload::Error(_) => MessageKind::Error,
        }
    }

    pub fn error(code: impl Into<String>, reason: impl Into<String>) -> Payload {
        Payload::Error(ErrorBody {
            code: code.into(),
            reason: reason.into(),
        })
    }

    fn from_value(kind: MessageKind, value: Value) -> serde_json::Result<Payload> {
        use serde_json::from_value as from;
        Ok(match kind {
            MessageKind::Join => Payload::Join(from(value)?),
            MessageKind::JoinAck => Payload::JoinAck(from(value)?),
            MessageKind::Leave => Payload::Leave(from(value)?),
            MessageKind::RosterUpdate => Payload::RosterUpdate(from(value)?),
            MessageKind::Offer => Payload::Offer(from(value)?),
            MessageKind::Answer => Payload::Answer(from(value)?),
            MessageKind::IceCandidate => Payload::IceCandidate(from(value)?),
            MessageKind::QualityRequest => Payload::QualityRequest(from(value)?),
            MessageKind::Chat => Payload::Chat(from(value)?),
            MessageKind::AvatarCommand => Payload::AvatarCommand(from(value)?),
            MessageKind::Telemetry => Payload::Telemetry(from(value)?),
            MessageKind::Alert => Payload::Alert(from(value)?),
            MessageKind::Heartbeat => Payload::Heartbeat(from(value)?),
            MessageKind::Error => Payload::Error(from(value)?),
        })
    }

    /// Kind-specific checks shared by encode and decode.
    fn validate(&self) -> Result<(), String> {
        match self {
            Payload::Chat(chat) => check_text(&chat.text),
            Payload::AvatarCommand(AvatarBody::Dispatch(req)) => check_text(&req.text),
            Payload::AvatarCommand(AvatarBody::Play(cmd)) => cmd.validate(),
            _ => Ok(()),
        }
    }
}

impl Serialize for Payload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Payload::Join(b) => b.serialize(s),
            Payload::JoinAck(b) => b.serialize(s),
            Payload::Leave(b) => b.serialize(s),
            Payload::RosterUpdate(b) => b.serialize(s),
            Payload::Offer(b) | Payload::Answer(b) => b.serialize(s),
            Payload::IceCandidate(b) => b.serialize(s),
            Payload::QualityRequest(b) => b.serialize(s),
            Payload::Chat(b) => b.serialize(s),
            Payload::AvatarCommand(b) => b.serialize(s),
            Payload::Telemetry(b) => b.serialize(s),
            Payload::Alert(b) => b.serialize(s),
            Payload::Heartbeat(b) => b.serialize(s),
            Payload::Error(b) => b.serialize(s),
        }
    }
}

/// A payload bound for one peer's outbound queue. `sender` is the peer that
/// originated it, or the server.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub to: PeerId,
    pub sender: PeerId,
    pub payload: Payload,
}

/// Validates the text of a chat line or an avatar dispatch.
pub fn check_text(text: &str) -> Result<(), String> {
    if text.is_empty() {
        return Err("text is empty".into());
    }
    let chars = text.chars().count();
    if chars > MAX_CHAT_CHARS {
        return Err(format!("text has {chars} characters, limit is {MAX_CHAT_CHARS}"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub version: u32,
    pub seq: u64,
    pub ts: u64,
    pub session: SessionId,
    pub sender: PeerId,
    pub payload: Payload,
}

impl Envelope {
    pub fn new(seq: u64, ts: u64, session: SessionId, sender: PeerId, payload: Payload) -> Self {
        Envelope {
            version: PROTOCOL_VERSION,
            seq,
            ts,
            session,
            sender,
            payload,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let invalid = |reason: String| Err(ProtocolError::InvalidEnvelope(reason));
        if self.version != PROTOCOL_VERSION {
            return invalid(format!("version {} is not {PROTOCOL_VERSION}", self.version));
        }
        if self.seq == 0 {
            return invalid("seq starts at 1".into());
        }
        if self.session.as_str().is_empty() {
            return invalid("empty session id".into());
        }
        if self.sender.as_str().is_empty() {
            return invalid("empty sender".into());
        }
        self.payload.validate().or_else(invalid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("unsupported protocol version {0}")]
    VersionMismatch(u64),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::InvalidEnvelope(_) => "invalid_envelope",
            ProtocolError::MalformedFrame(_) => "malformed_frame",
            ProtocolError::UnknownKind(_) => "unknown_kind",
            ProtocolError::VersionMismatch(_) => "version_mismatch",
        }
    }
}

#[derive(Serialize)]
struct WireOut<'a> {
    v: u32,
    seq: u64,
    ts: u64,
    session: &'a SessionId,
    sender: &'a PeerId,
    #[serde(rename = "type")]
    kind: &'static str,
    payload: &'a Payload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    #[allow(dead_code)]
    v: u64,
    seq: u64,
    ts: u64,
    session: SessionId,
    sender: PeerId,
    #[serde(rename = "type")]
    #[allow(dead_code)]
    kind: String,
    payload: Value,
}

/// Serializes a validated envelope into its canonical text frame.
pub fn encode(envelope: &Envelope) -> Result<String, ProtocolError> {
    envelope.validate()?;
    let wire = WireOut {
        v: envelope.version,
        seq: envelope.seq,
        ts: envelope.ts,
        session: &envelope.session,
        sender: &envelope.sender,
        kind: envelope.kind().wire_name(),
        payload: &envelope.payload,
    };
    serde_json::to_string(&wire).map_err(|e| ProtocolError::InvalidEnvelope(e.to_string()))
}

/// Parses and validates one frame. Never panics on arbitrary input.
pub fn decode(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
    let malformed = |e: serde_json::Error| ProtocolError::MalformedFrame(e.to_string());
    let value: Value = serde_json::from_slice(bytes).map_err(malformed)?;
    let obj = value
        .as_object()
        .ok_or_else(|| ProtocolError::MalformedFrame("frame is not an object".into()))?;

    let version = obj
        .get("v")
        .and_then(Value::as_u64)
        .ok_or_else(|| ProtocolError::MalformedFrame("missing or non-integer \"v\"".into()))?;
    if version != u64::from(PROTOCOL_VERSION) {
        return Err(ProtocolError::VersionMismatch(version));
    }
    let tag = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::MalformedFrame("missing \"type\"".into()))?;
    let kind = MessageKind::from_wire(tag).ok_or_else(|| ProtocolError::UnknownKind(tag.to_owned()))?;

    let wire: WireIn = serde_json::from_value(value).map_err(malformed)?;
    let payload = Payload::from_value(kind, wire.payload).map_err(malformed)?;
    let envelope = Envelope {
        version: PROTOCOL_VERSION,
        seq: wire.seq,
        ts: wire.ts,
        session: wire.session,
        sender: wire.sender,
        payload,
    };
    envelope.validate()?;
    Ok(envelope)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sequence violation: expected {expected}, got {got}")]
pub struct SeqViolation {
    pub expected: u64,
    pub got: u64,
}

/// Checks that one sender's sequence numbers run 1, 2, 3, ... without gaps.
#[derive(Debug, Clone)]
pub struct SeqTracker {
    next: u64,
}

impl Default for SeqTracker {
    fn default() -> Self {
        SeqTracker { next: 1 }
    }
}

impl SeqTracker {
    pub fn accept(&mut self, seq: u64) -> Result<(), SeqViolation> {
        if seq != self.next {
            return Err(SeqViolation {
                expected: self.next,
                got: seq,
            });
        }
        self.next += 1;
        Ok(())
    }

    pub fn expected(&self) -> u64 {
        self.next
    }
}

/// Per-sender trackers for a connection that carries frames from several
/// senders (the gateway plus relayed peers).
#[derive(Debug, Default, Clone)]
pub struct SenderSeqs {
    trackers: HashMap<PeerId, SeqTracker>,
}

impl SenderSeqs {
    pub fn accept(&mut self, sender: &PeerId, seq: u64) -> Result<(), SeqViolation> {
        self.trackers.entry(sender.clone()).or_default().accept(seq)
    }
}

/// Issues outbound sequence numbers starting at 1.
#[derive(Debug, Default, Clone)]
pub struct SeqCounter {
    last: u64,
}

impl SeqCounter {
    pub fn next_seq(&mut self) -> u64 {
        self.last += 1;
        self.last
    }
}

#[derive(Debug, Default, Clone)]
pub struct SenderCounters {
    counters: HashMap<PeerId, SeqCounter>,
}

impl SenderCounters {
    pub fn next_seq(&mut self, sender: &PeerId) -> u64 {
        self.counters.entry(sender.clone()).or_default().next_seq()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(seq: u64, payload: Payload) -> Envelope {
        Envelope::new(seq, 0, "s1".into(), "p1".into(), payload)
    }

    fn chat(text: &str) -> Payload {
        Payload::Chat(ChatBody {
            from: "p1".into(),
            to: ChatTarget::Peer("p2".into()),
            text: text.into(),
        })
    }

    #[test]
    fn heartbeat_round_trip() {
        let e = env(1, Payload::Heartbeat(HeartbeatBody {}));
        let frame = encode(&e).unwrap();
        assert_eq!(
            frame,
            r#"{"v":1,"seq":1,"ts":0,"session":"s1","sender":"p1","type":"heartbeat","payload":{}}"#
        );
        assert_eq!(decode(frame.as_bytes()).unwrap(), e);
    }

    #[test]
    fn empty_chat_is_rejected() {
        assert!(matches!(
            encode(&env(1, chat(""))),
            Err(ProtocolError::InvalidEnvelope(_))
        ));
    }

    #[test]
    fn chat_length_limit_counts_chars() {
        let ok = "é".repeat(MAX_CHAT_CHARS);
        assert!(encode(&env(1, chat(&ok))).is_ok());
        let long = "a".repeat(MAX_CHAT_CHARS + 1);
        assert!(encode(&env(1, chat(&long))).is_err());
    }

    #[test]
    fn hint_chat_round_trips_byte_identically() {
        let e = env(
            3,
            chat("To solve for k, first try isolating k on one side of the equation."),
        );
        let frame = encode(&e).unwrap();
        let back = decode(frame.as_bytes()).unwrap();
        assert_eq!(back, e);
        assert_eq!(encode(&back).unwrap(), frame);
    }

    #[test]
    fn version_two_is_rejected() {
        let frame = r#"{"v":2,"seq":1,"ts":0,"session":"s1","sender":"p1","type":"heartbeat","payload":{}}"#;
        assert_eq!(decode(frame.as_bytes()), Err(ProtocolError::VersionMismatch(2)));
    }

    #[test]
    fn unknown_kind_and_malformed() {
        let frame = r#"{"v":1,"seq":1,"ts":0,"session":"s1","sender":"p1","type":"dance","payload":{}}"#;
        assert!(matches!(decode(frame.as_bytes()), Err(ProtocolError::UnknownKind(k)) if k == "dance"));
        assert!(matches!(decode(b"not json"), Err(ProtocolError::MalformedFrame(_))));
        assert!(matches!(decode(b"[1,2]"), Err(ProtocolError::MalformedFrame(_))));
        assert!(matches!(decode(&[0xff, 0xfe]), Err(ProtocolError::MalformedFrame(_))));
        let extra = r#"{"v":1,"seq":1,"ts":0,"session":"s1","sender":"p1","type":"heartbeat","payload":{},"x":1}"#;
        assert!(matches!(decode(extra.as_bytes()), Err(ProtocolError::MalformedFrame(_))));
        let bad_payload = r#"{"v":1,"seq":1,"ts":0,"session":"s1","sender":"p1","type":"offer","payload":{"to":"t"}}"#;
        assert!(matches!(decode(bad_payload.as_bytes()), Err(ProtocolError::MalformedFrame(_))));
    }

    #[test]
    fn decode_rejects_invalid_content() {
        let frame = r#"{"v":1,"seq":0,"ts":0,"session":"s1","sender":"p1","type":"heartbeat","payload":{}}"#;
        assert!(matches!(decode(frame.as_bytes()), Err(ProtocolError::InvalidEnvelope(_))));
        let frame = r#"{"v":1,"seq":1,"ts":0,"session":"s1","sender":"p1","type":"chat","payload":{"from":"p1","to":"*","text":""}}"#;
        assert!(matches!(decode(frame.as_bytes()), Err(ProtocolError::InvalidEnvelope(_))));
    }

    #[test]
    fn broadcast_marker() {
        let e = env(
            1,
            Payload::Chat(ChatBody {
                from: "t".into(),
                to: ChatTarget::Broadcast,
                text: "hello all".into(),
            }),
        );
        let frame = encode(&e).unwrap();
        assert!(frame.contains(r#""to":"*""#));
        assert_eq!(decode(frame.as_bytes()).unwrap(), e);
    }

    #[test]
    fn kinds_round_trip_through_wire_names() {
        for kind in MessageKind::ALL {
            assert_eq!(MessageKind::from_wire(kind.wire_name()), Some(kind));
        }
    }

    #[test]
    fn seq_tracker_rejects_gaps_and_repeats() {
        let mut t = SeqTracker::default();
        t.accept(1).unwrap();
        t.accept(2).unwrap();
        assert_eq!(t.accept(2), Err(SeqViolation { expected: 3, got: 2 }));
        assert_eq!(t.accept(4), Err(SeqViolation { expected: 3, got: 4 }));
        t.accept(3).unwrap();
    }
}
