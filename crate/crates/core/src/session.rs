//! Session lifecycle, bearer tokens, roster membership and presence.

use std::collections::{BTreeMap, HashMap};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::{PeerId, PresenceStatus, Role, RosterEntry, SessionId};

pub const MAX_ALIAS_CHARS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceConfig {
    pub heartbeat_interval_ms: u64,
    pub stale_after_ms: u64,
    pub disconnect_after_ms: u64,
}

impl Default for PresenceConfig {
    fn default() -> Self {
        PresenceConfig {
            heartbeat_interval_ms: 15_000,
            stale_after_ms: 45_000,
            disconnect_after_ms: 90_000,
        }
    }
}

impl PresenceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.heartbeat_interval_ms == 0 || self.stale_after_ms == 0 || self.disconnect_after_ms == 0 {
            return Err("presence thresholds must be positive".into());
        }
        if self.stale_after_ms >= self.disconnect_after_ms {
            return Err("stale threshold must be below the disconnect threshold".into());
        }
        Ok(())
    }

    pub fn status(&self, elapsed_ms: u64) -> PresenceStatus {
        if elapsed_ms >= self.disconnect_after_ms {
            PresenceStatus::Disconnected
        } else if elapsed_ms >= self.stale_after_ms {
            PresenceStatus::Stale
        } else {
            PresenceStatus::Connected
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Presence {
    pub peer: PeerId,
    pub last_heartbeat: u64,
    pub status: PresenceStatus,
}

/// Opaque 128-bit bearer credential, hex encoded.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn generate() -> Token {
        let mut bytes = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut bytes);
        Token(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn sha256_hex(token: &str) -> String {
        hex::encode(Sha256::digest(token.as_bytes()))
    }
}

impl std::fmt::Debug for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Token(..)")
    }
}

/// Globally unique session id: 128 random bits, hex encoded.
pub fn new_session_id() -> SessionId {
    let mut bytes = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut bytes);
    SessionId::new(hex::encode(bytes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("session not found")]
    SessionNotFound,
    #[error("session is closed")]
    SessionClosed,
    #[error("the tutor seat is already taken")]
    TutorSeatTaken,
    #[error("invalid token")]
    InvalidToken,
    #[error("unknown peer {0}")]
    UnknownPeer(PeerId),
    #[error("alias must be 1..={MAX_ALIAS_CHARS} characters")]
    InvalidAlias,
}

#[derive(Clone, Debug)]
pub struct Member {
    pub peer: PeerId,
    pub alias: String,
    pub role: Role,
    pub last_heartbeat: u64,
}

#[derive(Debug, Clone)]
pub struct JoinOutcome {
    pub peer: PeerId,
    pub role: Role,
    pub token: Token,
    /// True when an existing seat was re-bound rather than added.
    pub rebound: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: SessionId,
    created_at: u64,
    state: SessionState,
    tutor_alias: String,
    tutor_peer: PeerId,
    tutor_token_sha256: String,
    tutor_seated: bool,
    members: BTreeMap<PeerId, Member>,
    tokens: HashMap<String, (PeerId, Role)>,
    next_student: u64,
    presence: PresenceConfig,
}

fn check_alias(alias: &str) -> Result<String, SessionError> {
    let alias = alias.trim();
    let n = alias.chars().count();
    if n == 0 || n > MAX_ALIAS_CHARS || alias.chars().any(char::is_control) {
        return Err(SessionError::InvalidAlias);
    }
    Ok(alias.to_owned())
}

impl Session {
    /// Opens a session with an unseated tutor and returns the tutor token.
    pub fn create(
        id: SessionId,
        tutor_alias: &str,
        now: u64,
        presence: PresenceConfig,
    ) -> Result<(Session, Token), SessionError> {
        let tutor_alias = check_alias(tutor_alias)?;
        let token = Token::generate();
        let tutor_peer = PeerId::new("tutor");
        let mut tokens = HashMap::new();
        tokens.insert(token.as_str().to_owned(), (tutor_peer.clone(), Role::Tutor));
        let session = Session {
            id,
            created_at: now,
            state: SessionState::Open,
            tutor_alias,
            tutor_peer,
            tutor_token_sha256: Token::sha256_hex(token.as_str()),
            tutor_seated: false,
            members: BTreeMap::new(),
            tokens,
            next_student: 1,
            presence,
        };
        Ok((session, token))
    }

    /// A closed, read-only session rebuilt from its log after a restart.
    pub fn recovered(
        id: SessionId,
        created_at: u64,
        tutor_alias: String,
        tutor_peer: PeerId,
        tutor_token_sha256: String,
        presence: PresenceConfig,
    ) -> Session {
        Session {
            id,
            created_at,
            state: SessionState::Closed,
            tutor_alias,
            tutor_peer,
            tutor_token_sha256,
            tutor_seated: false,
            members: BTreeMap::new(),
            tokens: HashMap::new(),
            next_student: 1,
            presence,
        }
    }

    pub fn id(&self) -> &SessionId {
        &self.id
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn is_open(&self) -> bool {
        self.state == SessionState::Open
    }

    pub fn tutor_alias(&self) -> &str {
        &self.tutor_alias
    }

    pub fn tutor_peer(&self) -> &PeerId {
        &self.tutor_peer
    }

    pub fn tutor_token_sha256(&self) -> &str {
        &self.tutor_token_sha256
    }

    /// The seated tutor, if any.
    pub fn tutor(&self) -> Option<&PeerId> {
        self.tutor_seated.then_some(&self.tutor_peer)
    }

    pub fn member(&self, peer: &PeerId) -> Option<&Member> {
        self.members.get(peer)
    }

    pub fn alias_of(&self, peer: &PeerId) -> Option<&str> {
        self.members.get(peer).map(|m| m.alias.as_str())
    }

    pub fn students(&self) -> impl Iterator<Item = &PeerId> {
        self.members
            .values()
            .filter(|m| m.role == Role::Student)
            .map(|m| &m.peer)
    }

    pub fn members(&self) -> impl Iterator<Item = &Member> {
        self.members.values()
    }

    pub fn is_student(&self, peer: &PeerId) -> bool {
        self.members.get(peer).is_some_and(|m| m.role == Role::Student)
    }

    /// Resolves a bearer token to the peer it was issued to.
    pub fn authenticate(&self, token: &str) -> Option<(PeerId, Role)> {
        self.tokens.get(token).cloned()
    }

    pub fn is_tutor_token(&self, token: &str) -> bool {
        Token::sha256_hex(token) == self.tutor_token_sha256
    }

    pub fn join(
        &mut self,
        alias: &str,
        role: Role,
        token: Option<&str>,
        now: u64,
    ) -> Result<JoinOutcome, SessionError> {
        if !self.is_open() {
            return Err(SessionError::SessionClosed);
        }
        match role {
            Role::Tutor => self.join_tutor(alias, token, now),
            Role::Student => self.join_student(alias, token, now),
        }
    }

    fn join_tutor(&mut self, alias: &str, token: Option<&str>, now: u64) -> Result<JoinOutcome, SessionError> {
        let presented = match token {
            Some(t) if self.is_tutor_token(t) => t,
            Some(_) => return Err(SessionError::InvalidToken),
            None if self.tutor_seated => return Err(SessionError::TutorSeatTaken),
            None => return Err(SessionError::InvalidToken),
        };
        let alias = if alias.trim().is_empty() {
            self.tutor_alias.clone()
        } else {
            check_alias(alias)?
        };
        let rebound = self.tutor_seated;
        self.tutor_seated = true;
        self.members.insert(
            self.tutor_peer.clone(),
            Member {
                peer: self.tutor_peer.clone(),
                alias,
                role: Role::Tutor,
                last_heartbeat: now,
            },
        );
        Ok(JoinOutcome {
            peer: self.tutor_peer.clone(),
            role: Role::Tutor,
            token: Token(presented.to_owned()),
            rebound,
        })
    }

    fn join_student(&mut self, alias: &str, token: Option<&str>, now: u64) -> Result<JoinOutcome, SessionError> {
        if let Some(t) = token {
            return match self.tokens.get(t) {
                Some((peer, Role::Student)) if self.members.contains_key(peer) => {
                    let peer = peer.clone();
                    if let Some(m) = self.members.get_mut(&peer) {
                        m.last_heartbeat = now;
                    }
                    Ok(JoinOutcome {
                        peer,
                        role: Role::Student,
                        token: Token(t.to_owned()),
                        rebound: true,
                    })
                }
                _ => Err(SessionError::InvalidToken),
            };
        }
        let alias = check_alias(alias)?;
        let peer = PeerId::new(format!("s{:04}", self.next_student));
        self.next_student += 1;
        let token = Token::generate();
        self.tokens
            .insert(token.as_str().to_owned(), (peer.clone(), Role::Student));
        self.members.insert(
            peer.clone(),
            Member {
                peer: peer.clone(),
                alias,
                role: Role::Student,
                last_heartbeat: now,
            },
        );
        Ok(JoinOutcome {
            peer,
            role: Role::Student,
            token,
            rebound: false,
        })
    }

    /// Removes a peer. A departing student's token is revoked; the tutor
    /// keeps theirs so the seat can be taken again.
    pub fn leave(&mut self, peer: &PeerId) -> Result<Member, SessionError> {
        let member = self
            .members
            .remove(peer)
            .ok_or_else(|| SessionError::UnknownPeer(peer.clone()))?;
        match member.role {
            Role::Tutor => self.tutor_seated = false,
            Role::Student => self.tokens.retain(|_, (p, _)| p != peer),
        }
        Ok(member)
    }

    pub fn heartbeat(&mut self, peer: &PeerId, now: u64) -> Result<Presence, SessionError> {
        let member = self
            .members
            .get_mut(peer)
            .ok_or_else(|| SessionError::UnknownPeer(peer.clone()))?;
        member.last_heartbeat = member.last_heartbeat.max(now);
        let last = member.last_heartbeat;
        Ok(Presence {
            peer: peer.clone(),
            last_heartbeat: last,
            status: self.presence.status(now.saturating_sub(last)),
        })
    }

    pub fn presence(&self, peer: &PeerId, now: u64) -> Result<Presence, SessionError> {
        let member = self
            .members
            .get(peer)
            .ok_or_else(|| SessionError::UnknownPeer(peer.clone()))?;
        Ok(Presence {
            peer: peer.clone(),
            last_heartbeat: member.last_heartbeat,
            status: self.presence.status(now.saturating_sub(member.last_heartbeat)),
        })
    }

    /// Peers whose silence has reached the disconnect threshold.
    pub fn disconnected(&self, now: u64) -> Vec<PeerId> {
        self.members
            .values()
            .filter(|m| self.presence.status(now.saturating_sub(m.last_heartbeat)) == PresenceStatus::Disconnected)
            .map(|m| m.peer.clone())
            .collect()
    }

    pub fn roster(&self, now: u64) -> Vec<RosterEntry> {
        let tutor = self.members.get(&self.tutor_peer);
        tutor
            .into_iter()
            .chain(self.members.values().filter(|m| m.role == Role::Student))
            .map(|m| RosterEntry {
                peer: m.peer.clone(),
                alias: m.alias.clone(),
                role: m.role,
                status: self.presence.status(now.saturating_sub(m.last_heartbeat)),
            })
            .collect()
    }

    /// Returns `true` if the session was already closed.
    pub fn close(&mut self, token: &str) -> Result<bool, SessionError> {
        if !self.is_tutor_token(token) {
            return Err(SessionError::InvalidToken);
        }
        Ok(self.shut_down())
    }

    /// Closes without a credential, for process shutdown. Returns whether the
    /// session was already closed.
    pub fn shut_down(&mut self) -> bool {
        let was_closed = self.state == SessionState::Closed;
        self.state = SessionState::Closed;
        self.members.clear();
        self.tokens.retain(|_, (_, role)| *role == Role::Tutor);
        self.tutor_seated = false;
        was_closed
    }
}
