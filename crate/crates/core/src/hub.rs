//! The per-session owner that ties roster, signaling, quality, alerts, avatar
//! dispatch and the event log together.
//!
//! Every mutation of a session runs under that session's lock. Within the
//! lock an operation computes its log records and outbound deliveries, writes
//! the records durably, and only then hands the deliveries to the [`Outbox`].
//! Operations on different sessions run in parallel.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dashmap::DashMap;
use parking_lot::Mutex;
use serde::Serialize;

use crate::alerts::{render_alert, Alert, AlertEngine, AlertRuleConfig, AlertUpdate, TelemetryEvent};
use crate::avatar::{compose_command, AvatarCommand, AvatarConfig};
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::eventlog::{Category, EventLog, LifecycleEvent, LogFilter, LogRecord, PendingRecord, Subject};
use crate::protocol::{
    check_text, AlertBody, AvatarBody, ChatBody, ChatTarget, Delivery, JoinAckBody, LeaveBody, Payload, PeerId, Role,
    RosterBody, RosterEntry, SessionId, TelemetryBody, MAX_CHAT_CHARS,
};
use crate::quality::{allocate, StreamAllocation, TierName, TierTable};
use crate::session::{new_session_id, Presence, PresenceConfig, Session, SessionError, Token};
use crate::signaling::{PairingState, Signaling, Transition};

#[derive(Clone, Debug)]
pub struct HubConfig {
    pub alerts: AlertRuleConfig,
    pub presence: PresenceConfig,
    pub tiers: TierTable,
    pub budget_kbps: u64,
    pub avatar: AvatarConfig,
    pub ice_servers: Vec<String>,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig {
            alerts: AlertRuleConfig::default(),
            presence: PresenceConfig::default(),
            tiers: TierTable::default(),
            budget_kbps: 4000,
            avatar: AvatarConfig::default(),
            ice_servers: vec!["stun:stun.l.google.com:19302".into()],
        }
    }
}

/// Receives deliveries in order, under the owning session's lock.
/// Implementations must not block.
pub trait Outbox: Send + Sync {
    fn deliver(&self, session: &SessionId, delivery: Delivery);
}

/// Keeps every delivery in memory. Used by tests and headless tools.
#[derive(Default)]
pub struct RecordingOutbox {
    deliveries: Mutex<Vec<(SessionId, Delivery)>>,
}

impl RecordingOutbox {
    pub fn take(&self) -> Vec<(SessionId, Delivery)> {
        std::mem::take(&mut *self.deliveries.lock())
    }

    pub fn take_for(&self, peer: &PeerId) -> Vec<Delivery> {
        let mut all = self.deliveries.lock();
        let (mine, rest): (Vec<_>, Vec<_>) = all.drain(..).partition(|(_, d)| &d.to == peer);
        *all = rest;
        mine.into_iter().map(|(_, d)| d).collect()
    }
}

impl Outbox for RecordingOutbox {
    fn deliver(&self, session: &SessionId, delivery: Delivery) {
        self.deliveries.lock().push((session.clone(), delivery));
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JoinResult {
    pub peer: PeerId,
    pub role: Role,
    #[serde(serialize_with = "token_str")]
    pub token: Token,
    pub roster: Vec<RosterEntry>,
    pub ice_servers: Vec<String>,
}

fn token_str<S: serde::Serializer>(t: &Token, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(t.as_str())
}

impl JoinResult {
    pub fn ack(&self) -> Payload {
        Payload::JoinAck(JoinAckBody {
            peer: self.peer.clone(),
            role: self.role,
            roster: self.roster.clone(),
            ice_servers: self.ice_servers.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Connection {
    pub id: u64,
    pub join: JoinResult,
    /// Connection id of the socket this one replaces, if any.
    pub replaced: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CloseSummary {
    pub session: SessionId,
    pub records: usize,
    pub closed_at: u64,
    pub already_closed: bool,
}

#[derive(Default)]
struct Effects {
    records: Vec<PendingRecord>,
    deliveries: Vec<Delivery>,
}

impl Effects {
    fn record(&mut self, ts: u64, category: Category, subject: Subject, body: &impl Serialize) {
        self.records.push(PendingRecord::new(ts, category, subject, body));
    }

    fn lifecycle(&mut self, ts: u64, subject: Subject, event: LifecycleEvent) {
        self.record(ts, Category::Lifecycle, subject, &event);
    }

    fn transitions(&mut self, ts: u64, transitions: impl IntoIterator<Item = Transition>) {
        for t in transitions {
            let subject = Subject::Peer(t.student.clone());
            self.record(ts, Category::Signal, subject, &t);
        }
    }

    fn send(&mut self, to: PeerId, sender: PeerId, payload: Payload) {
        self.deliveries.push(Delivery { to, sender, payload });
    }
}

struct Room {
    session: Session,
    signaling: Signaling,
    alerts: AlertEngine,
    zoomed: Option<PeerId>,
    allocation: StreamAllocation,
    /// Last tutor chat or avatar command delivered to each student.
    last_contact: HashMap<PeerId, u64>,
    /// Live socket per peer, by connection id.
    connections: HashMap<PeerId, u64>,
    last_ts: u64,
}

impl Room {
    fn new(session: Session, alerts: AlertRuleConfig) -> Room {
        let last_ts = session.created_at();
        Room {
            session,
            signaling: Signaling::new(),
            alerts: AlertEngine::new(alerts),
            zoomed: None,
            allocation: StreamAllocation {
                assignments: Vec::new(),
                total_kbps: 0,
                over_budget: false,
            },
            last_contact: HashMap::new(),
            connections: HashMap::new(),
            last_ts,
        }
    }

    /// Session clock: wall or simulated time, never going backwards.
    fn now(&mut self, clock: &dyn Clock) -> u64 {
        self.last_ts = self.last_ts.max(clock.now_ms());
        self.last_ts
    }

    fn require_open(&self) -> Result<()> {
        if self.session.is_open() {
            Ok(())
        } else {
            Err(SessionError::SessionClosed.into())
        }
    }

    fn require_member(&self, peer: &PeerId) -> Result<Role> {
        self.session
            .member(peer)
            .map(|m| m.role)
            .ok_or_else(|| SessionError::UnknownPeer(peer.clone()).into())
    }

    fn broadcast_roster(&self, fx: &mut Effects, now: u64) {
        let roster = self.session.roster(now);
        for entry in &roster {
            fx.send(
                entry.peer.clone(),
                PeerId::server(),
                Payload::RosterUpdate(RosterBody { roster: roster.clone() }),
            );
        }
    }

    fn reallocate(&mut self, config: &HubConfig, fx: &mut Effects, now: u64) -> Result<()> {
        let feeds: Vec<PeerId> = self.session.students().cloned().collect();
        let next = allocate(&feeds, self.zoomed.as_ref(), config.budget_kbps, &config.tiers)?;
        for (peer, tier) in &next.assignments {
            let before = self.allocation.tier_of(peer).unwrap_or(TierName::Low);
            if before != *tier {
                let t = self.signaling.retarget(peer, *tier, &mut fx.deliveries);
                fx.transitions(now, t);
            }
        }
        self.allocation = next;
        Ok(())
    }

    fn apply_alerts(&self, update: AlertUpdate, fx: &mut Effects) {
        let tutor = self.session.tutor().cloned();
        for alert in update.cleared.into_iter().chain(update.raised) {
            let alias = self
                .session
                .alias_of(&alert.student)
                .unwrap_or(alert.student.as_str())
                .to_owned();
            let body = AlertBody {
                text: render_alert(&alert, &alias),
                alert,
            };
            let ts = body.alert.cleared_at.unwrap_or(body.alert.raised_at);
            fx.record(ts, Category::Alert, Subject::Peer(body.alert.student.clone()), &body);
            if let Some(t) = &tutor {
                fx.send(t.clone(), PeerId::server(), Payload::Alert(body));
            }
        }
    }

    fn join(
        &mut self,
        config: &HubConfig,
        alias: &str,
        role: Role,
        token: Option<&str>,
        fx: &mut Effects,
        now: u64,
    ) -> Result<JoinResult> {
        let outcome = self.session.join(alias, role, token, now)?;
        let peer = outcome.peer.clone();
        if !outcome.rebound {
            let alias = self.session.alias_of(&peer).unwrap_or_default().to_owned();
            fx.lifecycle(
                now,
                Subject::Peer(peer.clone()),
                LifecycleEvent::Joined {
                    peer: peer.clone(),
                    alias,
                    role: outcome.role,
                },
            );
        }
        if outcome.role == Role::Student && !outcome.rebound {
            self.signaling.add_student(peer.clone());
            self.alerts.register(peer.clone(), now);
            self.reallocate(config, fx, now)?;
        }
        if !outcome.rebound {
            self.broadcast_roster(fx, now);
        }
        Ok(JoinResult {
            peer,
            role: outcome.role,
            token: outcome.token,
            roster: self.session.roster(now),
            ice_servers: config.ice_servers.clone(),
        })
    }

    fn leave(&mut self, config: &HubConfig, peer: &PeerId, reason: &str, fx: &mut Effects, now: u64) -> Result<()> {
        let member = self.session.leave(peer)?;
        self.connections.remove(peer);
        fx.lifecycle(
            now,
            Subject::Peer(peer.clone()),
            LifecycleEvent::Left {
                peer: peer.clone(),
                reason: reason.to_owned(),
            },
        );
        match member.role {
            Role::Student => {
                let t = self.signaling.remove_student(peer);
                fx.transitions(now, t);
                self.alerts.remove(peer);
                self.last_contact.remove(peer);
                if self.zoomed.as_ref() == Some(peer) {
                    self.zoomed = None;
                }
                self.reallocate(config, fx, now)?;
            }
            Role::Tutor => {
                let t = self.signaling.unbind_tutor();
                fx.transitions(now, t);
            }
        }
        fx.send(
            peer.clone(),
            PeerId::server(),
            Payload::Leave(LeaveBody {
                peer: Some(peer.clone()),
                reason: Some(reason.to_owned()),
            }),
        );
        self.broadcast_roster(fx, now);
        Ok(())
    }
}

pub struct Hub {
    config: HubConfig,
    clock: Arc<dyn Clock>,
    log: Arc<EventLog>,
    outbox: Arc<dyn Outbox>,
    rooms: DashMap<SessionId, Arc<Mutex<Room>>>,
    next_connection: AtomicU64,
}

impl Hub {
    pub fn new(config: HubConfig, clock: Arc<dyn Clock>, log: Arc<EventLog>, outbox: Arc<dyn Outbox>) -> Hub {
        Hub {
            config,
            clock,
            log,
            outbox,
            rooms: DashMap::new(),
            next_connection: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<_> = self.rooms.iter().map(|r| r.key().clone()).collect();
        ids.sort();
        ids
    }

    /// Reloads sessions found in the log store as closed, read-only sessions.
    pub fn recover(&self) -> Result<usize> {
        let ids = self.log.recover()?;
        let mut n = 0;
        for id in ids {
            if self.rooms.contains_key(&id) {
                continue;
            }
            let records = self.log.query(&id, &LogFilter::default())?;
            let created = records.iter().find_map(|r| match r.body_as::<LifecycleEvent>() {
                Some(LifecycleEvent::Created {
                    tutor_alias,
                    tutor_peer,
                    tutor_token_sha256,
                }) => Some((r.ts, tutor_alias, tutor_peer, tutor_token_sha256)),
                _ => None,
            });
            if let Some((ts, alias, peer, hash)) = created {
                let session = Session::recovered(id.clone(), ts, alias, peer, hash, self.config.presence.clone());
                self.rooms
                    .insert(id, Arc::new(Mutex::new(Room::new(session, self.config.alerts.clone()))));
                n += 1;
            }
        }
        Ok(n)
    }

    fn room(&self, session: &SessionId) -> Result<Arc<Mutex<Room>>> {
        self.rooms
            .get(session)
            .map(|r| r.clone())
            .ok_or_else(|| SessionError::SessionNotFound.into())
    }

    /// Runs `op` under the session lock, then commits its records and
    /// deliveries. A failed op commits nothing.
    fn with_room<T>(
        &self,
        session: &SessionId,
        op: impl FnOnce(&mut Room, &mut Effects, u64) -> Result<T>,
    ) -> Result<T> {
        let room = self.room(session)?;
        let mut room = room.lock();
        let now = room.now(self.clock.as_ref());
        let mut fx = Effects::default();
        let result = op(&mut room, &mut fx, now);
        match result {
            Ok(value) => {
                self.commit(session, fx)?;
                Ok(value)
            }
            Err(e) => Err(e),
        }
    }

    fn commit(&self, session: &SessionId, fx: Effects) -> Result<()> {
        if !fx.records.is_empty() {
            self.log.append_batch(session, fx.records)?;
        }
        for d in fx.deliveries {
            self.outbox.deliver(session, d);
        }
        Ok(())
    }

    /// Logs a client misbehaviour against the session.
    pub fn record_violation(&self, session: &SessionId, peer: &PeerId, reason: &str) -> Result<()> {
        let room = self.room(session)?;
        let mut room = room.lock();
        let now = room.now(self.clock.as_ref());
        let mut fx = Effects::default();
        fx.lifecycle(
            now,
            Subject::Peer(peer.clone()),
            LifecycleEvent::ProtocolViolation {
                peer: peer.clone(),
                reason: reason.to_owned(),
            },
        );
        self.commit(session, fx)
    }

    fn violation_guard<T>(&self, session: &SessionId, peer: &PeerId, result: Result<T>) -> Result<T> {
        if let Err(e) = &result {
            if e.is_protocol_violation() {
                let _ = self.record_violation(session, peer, &e.to_string());
            }
        }
        result
    }

    pub fn create_session(&self, tutor_alias: &str) -> Result<(SessionId, Token)> {
        let id = new_session_id();
        let now = self.clock.now_ms();
        let (session, token) = Session::create(id.clone(), tutor_alias, now, self.config.presence.clone())?;
        self.log.create_session(&id)?;
        let created = LifecycleEvent::Created {
            tutor_alias: session.tutor_alias().to_owned(),
            tutor_peer: session.tutor_peer().clone(),
            tutor_token_sha256: session.tutor_token_sha256().to_owned(),
        };
        self.log.append(&id, now, Category::Lifecycle, Subject::Session, &created)?;
        let room = Room::new(session, self.config.alerts.clone());
        self.rooms.insert(id.clone(), Arc::new(Mutex::new(room)));
        Ok((id, token))
    }

    pub fn join(&self, session: &SessionId, alias: &str, role: Role, token: Option<&str>) -> Result<JoinResult> {
        self.with_room(session, |room, fx, now| room.join(&self.config, alias, role, token, fx, now))
    }

    /// Binds a socket connection to the peer its token was issued to. The
    /// tutor token seats the tutor (or takes the seat over). Pairings that
    /// involve the peer restart, since its browser has new peer connections.
    pub fn connect(&self, session: &SessionId, token: &str) -> Result<Connection> {
        let id = self.next_connection.fetch_add(1, Ordering::Relaxed);
        self.with_room(session, |room, fx, now| {
            room.require_open()?;
            let role = if room.session.is_tutor_token(token) {
                Role::Tutor
            } else {
                match room.session.authenticate(token) {
                    Some((_, role)) => role,
                    None => return Err(SessionError::InvalidToken.into()),
                }
            };
            let join = room.join(&self.config, "", role, Some(token), fx, now)?;
            let replaced = room.connections.insert(join.peer.clone(), id);
            let t = match role {
                Role::Tutor => room.signaling.bind_tutor(join.peer.clone(), &mut fx.deliveries),
                Role::Student => room.signaling.restart_student(&join.peer, &mut fx.deliveries),
            };
            fx.transitions(now, t);
            // the acknowledgement is the first frame the new socket sees
            fx.deliveries.insert(
                0,
                Delivery {
                    to: join.peer.clone(),
                    sender: PeerId::server(),
                    payload: join.ack(),
                },
            );
            Ok(Connection { id, join, replaced })
        })
    }

    /// A socket closed. The peer stays on the roster until it leaves or its
    /// heartbeats time out, but its pairings stop.
    pub fn disconnect(&self, session: &SessionId, peer: &PeerId, connection: u64) -> Result<()> {
        self.with_room(session, |room, fx, now| {
            if room.connections.get(peer) != Some(&connection) {
                return Ok(());
            }
            room.connections.remove(peer);
            if !room.session.is_open() {
                return Ok(());
            }
            match room.require_member(peer)? {
                Role::Tutor => {
                    let t = room.signaling.unbind_tutor();
                    fx.transitions(now, t);
                }
                Role::Student => {
                    let t = room.signaling.detach_student(peer);
                    fx.transitions(now, t);
                }
            }
            Ok(())
        })
    }

    /// Resolves any token of the session, the tutor token included, to the
    /// peer it belongs to.
    pub fn identify(&self, session: &SessionId, token: &str) -> Result<(PeerId, Role)> {
        let room = self.room(session)?;
        let room = room.lock();
        if room.session.is_tutor_token(token) {
            return Ok((room.session.tutor_peer().clone(), Role::Tutor));
        }
        room.session
            .authenticate(token)
            .ok_or_else(|| SessionError::InvalidToken.into())
    }

    pub fn authenticate(&self, session: &SessionId, token: &str) -> Result<(PeerId, Role)> {
        let room = self.room(session)?;
        let room = room.lock();
        room.session
            .authenticate(token)
            .ok_or_else(|| SessionError::InvalidToken.into())
    }

    pub fn authorize_tutor(&self, session: &SessionId, token: &str) -> Result<()> {
        let room = self.room(session)?;
        let room = room.lock();
        if room.session.is_tutor_token(token) {
            Ok(())
        } else {
            Err(SessionError::InvalidToken.into())
        }
    }

    pub fn leave(&self, session: &SessionId, peer: &PeerId, reason: &str) -> Result<Vec<RosterEntry>> {
        self.with_room(session, |room, fx, now| {
            room.leave(&self.config, peer, reason, fx, now)?;
            Ok(room.session.roster(now))
        })
    }

    pub fn heartbeat(&self, session: &SessionId, peer: &PeerId) -> Result<Presence> {
        self.with_room(session, |room, _, now| Ok(room.session.heartbeat(peer, now)?))
    }

    pub fn presence(&self, session: &SessionId, peer: &PeerId) -> Result<Presence> {
        let room = self.room(session)?;
        let mut room = room.lock();
        let now = room.now(self.clock.as_ref());
        Ok(room.session.presence(peer, now)?)
    }

    pub fn close_session(&self, session: &SessionId, token: &str) -> Result<CloseSummary> {
        self.close_inner(session, Some(token))
    }

    /// Closes every open session, as on process shutdown.
    pub fn close_all(&self) -> Vec<CloseSummary> {
        self.session_ids()
            .iter()
            .filter_map(|id| self.close_inner(id, None).ok())
            .filter(|c| !c.already_closed)
            .collect()
    }

    fn close_inner(&self, session: &SessionId, token: Option<&str>) -> Result<CloseSummary> {
        let (closed_at, already_closed) = self.with_room(session, |room, fx, now| {
            let members: Vec<PeerId> = room.session.members().map(|m| m.peer.clone()).collect();
            let already = match token {
                Some(token) => room.session.close(token)?,
                None => room.session.shut_down(),
            };
            if already {
                return Ok((now, true));
            }
            let t = room.signaling.close_all();
            fx.transitions(now, t);
            room.alerts = AlertEngine::new(self.config.alerts.clone());
            room.connections.clear();
            room.zoomed = None;
            fx.lifecycle(now, Subject::Session, LifecycleEvent::Closed);
            for peer in members {
                fx.send(
                    peer,
                    PeerId::server(),
                    Payload::Leave(LeaveBody {
                        peer: None,
                        reason: Some("session closed".into()),
                    }),
                );
            }
            Ok((now, false))
        })?;
        Ok(CloseSummary {
            session: session.clone(),
            records: self.log.len(session)?,
            closed_at,
            already_closed,
        })
    }

    pub fn relay_offer(&self, session: &SessionId, from: &PeerId, to: &PeerId, sdp: String) -> Result<()> {
        let r = self.with_room(session, |room, fx, now| {
            room.require_open()?;
            room.require_member(from)?;
            let t = room.signaling.relay_offer(from, to, sdp, &mut fx.deliveries)?;
            fx.transitions(now, [t]);
            Ok(())
        });
        self.violation_guard(session, from, r)
    }

    pub fn relay_answer(&self, session: &SessionId, from: &PeerId, to: &PeerId, sdp: String) -> Result<()> {
        let r = self.with_room(session, |room, fx, now| {
            room.require_open()?;
            room.require_member(from)?;
            let t = room.signaling.relay_answer(from, to, sdp, &mut fx.deliveries)?;
            fx.transitions(now, t);
            Ok(())
        });
        self.violation_guard(session, from, r)
    }

    pub fn relay_candidate(&self, session: &SessionId, from: &PeerId, to: &PeerId, candidate: String) -> Result<()> {
        let r = self.with_room(session, |room, fx, _| {
            room.require_open()?;
            room.require_member(from)?;
            room.signaling.relay_candidate(from, to, candidate, &mut fx.deliveries)?;
            Ok(())
        });
        self.violation_guard(session, from, r)
    }

    pub fn request_renegotiation(
        &self,
        session: &SessionId,
        from: &PeerId,
        student: &PeerId,
        tier: TierName,
    ) -> Result<()> {
        let r = self.with_room(session, |room, fx, now| {
            room.require_open()?;
            room.require_member(from)?;
            let t = room
                .signaling
                .request_renegotiation(from, student, tier, &mut fx.deliveries)?;
            fx.transitions(now, [t]);
            Ok(())
        });
        self.violation_guard(session, from, r)
    }

    /// Sets (or clears) the enlarged feed and re-issues tiers that changed.
    pub fn set_zoom(&self, session: &SessionId, from: &PeerId, target: Option<PeerId>) -> Result<StreamAllocation> {
        let r = self.with_room(session, |room, fx, now| {
            room.require_open()?;
            if room.require_member(from)? != Role::Tutor {
                return Err(Error::RoleViolation("only the tutor zooms".into()));
            }
            let previous = room.zoomed.clone();
            room.zoomed = target;
            if let Err(e) = room.reallocate(&self.config, fx, now) {
                room.zoomed = previous;
                return Err(e);
            }
            Ok(room.allocation.clone())
        });
        self.violation_guard(session, from, r)
    }

    pub fn chat(&self, session: &SessionId, from: &PeerId, to: ChatTarget, text: &str) -> Result<()> {
        let r = self.with_room(session, |room, fx, now| {
            check_chat_text(text)?;
            room.require_open()?;
            let role = room.require_member(from)?;
            let recipients: Vec<PeerId> = match (role, &to) {
                (Role::Student, ChatTarget::Peer(p)) if room.session.tutor() == Some(p) => vec![p.clone()],
                (Role::Student, _) => return Err(Error::RoleViolation("students chat with the tutor only".into())),
                (Role::Tutor, ChatTarget::Broadcast) => room.session.students().cloned().collect(),
                (Role::Tutor, ChatTarget::Peer(p)) if room.session.is_student(p) => vec![p.clone()],
                (Role::Tutor, ChatTarget::Peer(p)) => return Err(SessionError::UnknownPeer(p.clone()).into()),
            };
            let body = ChatBody {
                from: from.clone(),
                to,
                text: text.to_owned(),
            };
            fx.record(now, Category::Chat, Subject::Peer(from.clone()), &body);
            for r in recipients {
                if role == Role::Tutor {
                    room.last_contact.insert(r.clone(), now);
                }
                fx.send(r, from.clone(), Payload::Chat(body.clone()));
            }
            Ok(())
        });
        self.violation_guard(session, from, r)
    }

    /// Feeds one telemetry report through the alert rules. Rules run on the
    /// session clock; the client's own timestamp is kept in the log body.
    pub fn ingest(&self, session: &SessionId, from: &PeerId, report: TelemetryBody) -> Result<AlertUpdate> {
        let r = self.with_room(session, |room, fx, now| {
            room.require_open()?;
            if room.require_member(from)? != Role::Student {
                return Err(Error::RoleViolation("only students report telemetry".into()));
            }
            fx.record(now, Category::Telemetry, Subject::Peer(from.clone()), &report);
            let update = room.alerts.ingest(&TelemetryEvent {
                student: from.clone(),
                kind: report.activity,
                ts: now,
            })?;
            room.apply_alerts(update.clone(), fx);
            Ok(update)
        });
        self.violation_guard(session, from, r)
    }

    pub fn dispatch(
        &self,
        session: &SessionId,
        from: &PeerId,
        target: &PeerId,
        text: &str,
        show_bubble: bool,
    ) -> Result<AvatarCommand> {
        let r = self.with_room(session, |room, fx, now| {
            room.require_open()?;
            if room.require_member(from)? != Role::Tutor {
                return Err(Error::RoleViolation("only the tutor dispatches avatar messages".into()));
            }
            if !room.session.is_student(target) {
                return Err(SessionError::UnknownPeer(target.clone()).into());
            }
            check_chat_text(text)?;
            let window = self.config.avatar.attention_window_ms;
            let attention_wave = room
                .last_contact
                .get(target)
                .is_none_or(|&t| now.saturating_sub(t) >= window);
            let cmd = compose_command(target.clone(), text, show_bubble, attention_wave, &self.config.avatar)?;
            fx.record(now, Category::AvatarCommand, Subject::Peer(target.clone()), &cmd);
            fx.record(
                now,
                Category::Chat,
                Subject::Peer(from.clone()),
                &ChatBody {
                    from: from.clone(),
                    to: ChatTarget::Peer(target.clone()),
                    text: text.to_owned(),
                },
            );
            fx.send(target.clone(), from.clone(), Payload::AvatarCommand(AvatarBody::Play(cmd.clone())));
            room.last_contact.insert(target.clone(), now);
            Ok(cmd)
        });
        self.violation_guard(session, from, r)
    }

    pub fn canned_prompts(&self) -> &[String] {
        crate::avatar::canned_prompts(&self.config.avatar)
    }

    /// Periodic work for one session: drop peers whose heartbeats stopped and
    /// evaluate the inactivity rule.
    pub fn tick_session(&self, session: &SessionId) -> Result<AlertUpdate> {
        self.with_room(session, |room, fx, now| {
            if !room.session.is_open() {
                return Ok(AlertUpdate::default());
            }
            for peer in room.session.disconnected(now) {
                room.leave(&self.config, &peer, "heartbeat timeout", fx, now)?;
            }
            let update = room.alerts.tick(now);
            room.apply_alerts(update.clone(), fx);
            Ok(update)
        })
    }

    pub fn tick(&self) -> Vec<Alert> {
        let mut raised = Vec::new();
        for id in self.session_ids() {
            if let Ok(update) = self.tick_session(&id) {
                raised.extend(update.raised);
            }
        }
        raised
    }

    pub fn query(&self, session: &SessionId, filter: &LogFilter) -> Result<Vec<LogRecord>> {
        self.room(session)?;
        Ok(self.log.query(session, filter)?)
    }

    pub fn transcript(&self, session: &SessionId, student: &PeerId) -> Result<Vec<LogRecord>> {
        self.room(session)?;
        Ok(self.log.transcript(session, student)?)
    }

    pub fn roster(&self, session: &SessionId) -> Result<Vec<RosterEntry>> {
        let room = self.room(session)?;
        let mut room = room.lock();
        let now = room.now(self.clock.as_ref());
        Ok(room.session.roster(now))
    }

    pub fn is_open(&self, session: &SessionId) -> Result<bool> {
        Ok(self.room(session)?.lock().session.is_open())
    }

    pub fn pairing_state(&self, session: &SessionId, student: &PeerId) -> Result<Option<PairingState>> {
        let room = self.room(session)?;
        let room = room.lock();
        Ok(room.signaling.pairing(student).map(|p| p.state()))
    }

    pub fn pairing_tier(&self, session: &SessionId, student: &PeerId) -> Result<Option<TierName>> {
        let room = self.room(session)?;
        let room = room.lock();
        Ok(room.signaling.pairing(student).map(|p| p.current_tier()))
    }

    /// Signaling payload bytes the relay still holds for the session.
    pub fn retained_signal_bytes(&self, session: &SessionId) -> Result<usize> {
        let room = self.room(session)?;
        let room = room.lock();
        Ok(room.signaling.pairings().map(|p| p.retained_payload_bytes()).sum())
    }

    pub fn allocation(&self, session: &SessionId) -> Result<StreamAllocation> {
        Ok(self.room(session)?.lock().allocation.clone())
    }

    pub fn open_alerts(&self, session: &SessionId) -> Result<Vec<Alert>> {
        Ok(self.room(session)?.lock().alerts.open_alerts())
    }
}

fn check_chat_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    if text.chars().count() > MAX_CHAT_CHARS {
        return Err(Error::TextTooLong);
    }
    debug_assert!(check_text(text).is_ok());
    Ok(())
}
