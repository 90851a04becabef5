//! Student↔tutor pairing state machines. The server relays descriptions and
//! candidates between the two browsers and never touches media.
//!
//! Transition table (✗ = `IllegalTransition`, state unchanged):
//!
//! | state          | Offer        | Answer    | Candidate        | QualityRequest | Close  |
//! |----------------|--------------|-----------|------------------|----------------|--------|
//! | Idle           | OfferPending | ✗         | Idle (queued)    | ✗              | Closed |
//! | OfferPending   | ✗            | Connected | OfferPending     | ✗              | Closed |
//! | Connected      | ✗            | ✗         | Connected        | Renegotiating  | Closed |
//! | Renegotiating  | OfferPending | ✗         | Renegotiating    | ✗              | Closed |
//! | Closed         | ✗            | ✗         | `NotPaired`      | ✗              | Closed |
//!
//! Students always send the offer. A requested tier takes effect when the
//! pairing next reaches `Connected`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{CandidateBody, Delivery, Payload, PeerId, QualityRequest, SdpBody};
use crate::quality::TierName;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingState {
    Idle,
    OfferPending,
    Connected,
    Renegotiating,
    Closed,
}

impl PairingState {
    pub const ALL: [PairingState; 5] = [
        PairingState::Idle,
        PairingState::OfferPending,
        PairingState::Connected,
        PairingState::Renegotiating,
        PairingState::Closed,
    ];
}

impl fmt::Display for PairingState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairingState::Idle => "idle",
            PairingState::OfferPending => "offer_pending",
            PairingState::Connected => "connected",
            PairingState::Renegotiating => "renegotiating",
            PairingState::Closed => "closed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalInput {
    Offer,
    Answer,
    Candidate,
    QualityRequest,
    Close,
}

impl SignalInput {
    pub const ALL: [SignalInput; 5] = [
        SignalInput::Offer,
        SignalInput::Answer,
        SignalInput::Candidate,
        SignalInput::QualityRequest,
        SignalInput::Close,
    ];
}

/// The documented transition table. `None` means the input is illegal in
/// that state.
pub fn transition(state: PairingState, input: SignalInput) -> Option<PairingState> {
    use PairingState::*;
    use SignalInput as I;
    match (state, input) {
        (_, I::Close) => Some(Closed),
        (Idle | Renegotiating, I::Offer) => Some(OfferPending),
        (OfferPending, I::Answer) => Some(Connected),
        (Connected, I::QualityRequest) => Some(Renegotiating),
        (Closed, I::Candidate) => None,
        (s, I::Candidate) => Some(s),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignalError {
    #[error("{input:?} is not allowed while the pairing is {state}")]
    IllegalTransition { state: PairingState, input: SignalInput },
    #[error("{from} and {to} are not paired")]
    NotPaired { from: PeerId, to: PeerId },
    #[error("role violation: {0}")]
    RoleViolation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToTutor,
    ToStudent,
}

/// A state change worth recording in the session log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub student: PeerId,
    pub from: PairingState,
    pub to: PairingState,
    pub input: SignalInput,
    pub tier: TierName,
}

#[derive(Clone, Debug)]
pub struct Pairing {
    student: PeerId,
    tutor: PeerId,
    state: PairingState,
    pending_candidates: VecDeque<(Direction, String)>,
    current_tier: TierName,
    requested_tier: Option<TierName>,
    /// Tier change that arrived mid-handshake; requested once connected.
    deferred_tier: Option<TierName>,
}

impl Pairing {
    pub fn new(student: PeerId, tutor: PeerId, tier: TierName) -> Self {
        Pairing {
            student,
            tutor,
            state: PairingState::Idle,
            pending_candidates: VecDeque::new(),
            current_tier: tier,
            requested_tier: None,
            deferred_tier: None,
        }
    }

    pub fn state(&self) -> PairingState {
        self.state
    }

    pub fn student(&self) -> &PeerId {
        &self.student
    }

    pub fn tutor(&self) -> &PeerId {
        &self.tutor
    }

    pub fn current_tier(&self) -> TierName {
        self.current_tier
    }

    pub fn queued_candidates(&self) -> usize {
        self.pending_candidates.len()
    }

    /// Bytes of signaling payload still held by the relay.
    pub fn retained_payload_bytes(&self) -> usize {
        self.pending_candidates.iter().map(|(_, c)| c.len()).sum()
    }

    fn step(&mut self, input: SignalInput) -> Result<Transition, SignalError> {
        let next = transition(self.state, input).ok_or(SignalError::IllegalTransition {
            state: self.state,
            input,
        })?;
        let t = Transition {
            student: self.student.clone(),
            from: self.state,
            to: next,
            input,
            tier: self.current_tier,
        };
        self.state = next;
        Ok(t)
    }

    fn deliver(&self, direction: Direction, payload: Payload) -> Delivery {
        let (to, sender) = match direction {
            Direction::ToTutor => (self.tutor.clone(), self.student.clone()),
            Direction::ToStudent => (self.student.clone(), self.tutor.clone()),
        };
        Delivery { to, sender, payload }
    }

    fn candidate_delivery(&self, direction: Direction, candidate: String) -> Delivery {
        let to = match direction {
            Direction::ToTutor => self.tutor.clone(),
            Direction::ToStudent => self.student.clone(),
        };
        self.deliver(direction, Payload::IceCandidate(CandidateBody { to, candidate }))
    }

    fn quality_request(&self, tier: TierName) -> Delivery {
        Delivery {
            to: self.student.clone(),
            sender: PeerId::server(),
            payload: Payload::QualityRequest(QualityRequest::Tier {
                to: self.student.clone(),
                tier,
            }),
        }
    }

    /// Student offer. Candidates queued while idle are released first, so each
    /// direction is delivered exactly in send order; clients hold candidates
    /// that arrive before the remote description.
    pub fn offer(&mut self, sdp: String, out: &mut Vec<Delivery>) -> Result<Transition, SignalError> {
        let t = self.step(SignalInput::Offer)?;
        while let Some((dir, c)) = self.pending_candidates.pop_front() {
            out.push(self.candidate_delivery(dir, c));
        }
        out.push(self.deliver(
            Direction::ToTutor,
            Payload::Offer(SdpBody {
                to: self.tutor.clone(),
                sdp,
            }),
        ));
        Ok(t)
    }

    /// Tutor answer. Applies any requested tier, then issues a deferred one.
    pub fn answer(&mut self, sdp: String, out: &mut Vec<Delivery>) -> Result<Vec<Transition>, SignalError> {
        let mut t = self.step(SignalInput::Answer)?;
        if let Some(tier) = self.requested_tier.take() {
            self.current_tier = tier;
            t.tier = tier;
        }
        out.push(self.deliver(
            Direction::ToStudent,
            Payload::Answer(SdpBody {
                to: self.student.clone(),
                sdp,
            }),
        ));
        let mut transitions = vec![t];
        if let Some(tier) = self.deferred_tier.take() {
            if tier != self.current_tier {
                transitions.push(self.request_tier(tier, out)?);
            }
        }
        Ok(transitions)
    }

    pub fn candidate(
        &mut self,
        direction: Direction,
        candidate: String,
        out: &mut Vec<Delivery>,
    ) -> Result<(), SignalError> {
        match self.state {
            PairingState::Closed => {
                let (from, to) = match direction {
                    Direction::ToTutor => (self.student.clone(), self.tutor.clone()),
                    Direction::ToStudent => (self.tutor.clone(), self.student.clone()),
                };
                Err(SignalError::NotPaired { from, to })
            }
            PairingState::Idle => {
                self.pending_candidates.push_back((direction, candidate));
                Ok(())
            }
            _ => {
                out.push(self.candidate_delivery(direction, candidate));
                Ok(())
            }
        }
    }

    /// Explicit renegotiation request; legal only while connected.
    pub fn request_tier(&mut self, tier: TierName, out: &mut Vec<Delivery>) -> Result<Transition, SignalError> {
        let mut t = self.step(SignalInput::QualityRequest)?;
        t.tier = tier;
        self.requested_tier = Some(tier);
        out.push(self.quality_request(tier));
        Ok(t)
    }

    /// Allocation-driven tier change, valid in every live state.
    pub fn retarget(&mut self, tier: TierName, out: &mut Vec<Delivery>) -> Option<Transition> {
        match self.state {
            PairingState::Closed => None,
            PairingState::Connected => {
                if tier == self.current_tier {
                    return None;
                }
                self.request_tier(tier, out).ok()
            }
            PairingState::Renegotiating => {
                self.requested_tier = Some(tier);
                out.push(self.quality_request(tier));
                None
            }
            PairingState::OfferPending => {
                self.deferred_tier = Some(tier);
                None
            }
            PairingState::Idle => {
                self.current_tier = tier;
                out.push(self.quality_request(tier));
                None
            }
        }
    }

    pub fn close(&mut self) -> Option<Transition> {
        self.pending_candidates.clear();
        self.requested_tier = None;
        self.deferred_tier = None;
        if self.state == PairingState::Closed {
            return None;
        }
        self.step(SignalInput::Close).ok()
    }
}

/// All pairings of one session, keyed by student.
#[derive(Debug, Default, Clone)]
pub struct Signaling {
    tutor: Option<PeerId>,
    students: BTreeMap<PeerId, Option<Pairing>>,
    initial_tier: BTreeMap<PeerId, TierName>,
}

impl Signaling {
    pub fn new() -> Self {
        Signaling::default()
    }

    pub fn tutor(&self) -> Option<&PeerId> {
        self.tutor.as_ref()
    }

    pub fn pairing(&self, student: &PeerId) -> Option<&Pairing> {
        self.students.get(student).and_then(Option::as_ref)
    }

    pub fn pairings(&self) -> impl Iterator<Item = &Pairing> {
        self.students.values().flatten()
    }

    pub fn add_student(&mut self, student: PeerId) {
        let pairing = self
            .tutor
            .clone()
            .map(|t| Pairing::new(student.clone(), t, TierName::Low));
        self.students.insert(student.clone(), pairing);
        self.initial_tier.insert(student, TierName::Low);
    }

    pub fn remove_student(&mut self, student: &PeerId) -> Option<Transition> {
        self.initial_tier.remove(student);
        self.students.remove(student).flatten().and_then(|mut p| p.close())
    }

    /// Binds a (new) tutor: every pairing restarts from Idle and each student
    /// is asked to offer again at its current tier.
    pub fn bind_tutor(&mut self, tutor: PeerId, out: &mut Vec<Delivery>) -> Vec<Transition> {
        let transitions = self.unbind_tutor();
        self.tutor = Some(tutor.clone());
        for (student, slot) in self.students.iter_mut() {
            let tier = self.initial_tier.get(student).copied().unwrap_or(TierName::Low);
            let pairing = Pairing::new(student.clone(), tutor.clone(), tier);
            out.push(pairing.quality_request(tier));
            *slot = Some(pairing);
        }
        transitions
    }

    /// A student's connection was (re)established: any old pairing is closed
    /// and, with a tutor bound, a fresh one starts and the student is asked
    /// to offer at its current tier.
    pub fn restart_student(&mut self, student: &PeerId, out: &mut Vec<Delivery>) -> Vec<Transition> {
        let mut transitions = Vec::new();
        let Some(slot) = self.students.get_mut(student) else {
            return transitions;
        };
        // An idle pairing has nothing to tear down; it is simply replaced.
        if let Some(p) = slot.as_mut().filter(|p| p.state() != PairingState::Idle) {
            transitions.extend(p.close());
        }
        if let Some(tutor) = self.tutor.clone() {
            let tier = self.initial_tier.get(student).copied().unwrap_or(TierName::Low);
            let pairing = Pairing::new(student.clone(), tutor, tier);
            out.push(pairing.quality_request(tier));
            *slot = Some(pairing);
        }
        transitions
    }

    /// A student's connection dropped; its pairing closes until it returns.
    pub fn detach_student(&mut self, student: &PeerId) -> Option<Transition> {
        self.students.get_mut(student)?.as_mut()?.close()
    }

    /// Tears down every pairing; the tutor seat becomes empty.
    pub fn unbind_tutor(&mut self) -> Vec<Transition> {
        self.tutor = None;
        let mut out = Vec::new();
        for p in self.students.values_mut().flatten() {
            if let Some(t) = p.close() {
                out.push(t);
            }
        }
        out
    }

    fn resolve(&mut self, from: &PeerId, to: &PeerId) -> Result<(&mut Pairing, Direction), SignalError> {
        let not_paired = || SignalError::NotPaired {
            from: from.clone(),
            to: to.clone(),
        };
        let tutor = self.tutor.clone();
        let is_tutor = |p: &PeerId| tutor.as_ref() == Some(p);
        let from_student = self.students.contains_key(from);
        let to_student = self.students.contains_key(to);
        if from_student && to_student {
            return Err(SignalError::RoleViolation(format!("{from} and {to} are both students")));
        }
        let (student, direction) = if from_student && is_tutor(to) {
            (from, Direction::ToTutor)
        } else if is_tutor(from) && to_student {
            (to, Direction::ToStudent)
        } else {
            return Err(not_paired());
        };
        match self.students.get_mut(student) {
            Some(Some(p)) => Ok((p, direction)),
            _ => Err(not_paired()),
        }
    }

    pub fn relay_offer(
        &mut self,
        from: &PeerId,
        to: &PeerId,
        sdp: String,
        out: &mut Vec<Delivery>,
    ) -> Result<Transition, SignalError> {
        let (pairing, direction) = self.resolve(from, to)?;
        if direction != Direction::ToTutor {
            return Err(SignalError::RoleViolation("offers are sent by students".into()));
        }
        pairing.offer(sdp, out)
    }

    pub fn relay_answer(
        &mut self,
        from: &PeerId,
        to: &PeerId,
        sdp: String,
        out: &mut Vec<Delivery>,
    ) -> Result<Vec<Transition>, SignalError> {
        let (pairing, direction) = self.resolve(from, to)?;
        if direction != Direction::ToStudent {
            return Err(SignalError::RoleViolation("answers are sent by the tutor".into()));
        }
        let transitions = pairing.answer(sdp, out)?;
        let tier = pairing.current_tier();
        let student = pairing.student().clone();
        self.initial_tier.insert(student, tier);
        Ok(transitions)
    }

    pub fn relay_candidate(
        &mut self,
        from: &PeerId,
        to: &PeerId,
        candidate: String,
        out: &mut Vec<Delivery>,
    ) -> Result<(), SignalError> {
        let (pairing, direction) = self.resolve(from, to)?;
        pairing.candidate(direction, candidate, out)
    }

    pub fn request_renegotiation(
        &mut self,
        from: &PeerId,
        student: &PeerId,
        tier: TierName,
        out: &mut Vec<Delivery>,
    ) -> Result<Transition, SignalError> {
        if self.tutor.as_ref() != Some(from) {
            return Err(SignalError::RoleViolation("only the tutor requests renegotiation".into()));
        }
        let (pairing, _) = self.resolve(from, student)?;
        pairing.request_tier(tier, out)
    }

    pub fn retarget(&mut self, student: &PeerId, tier: TierName, out: &mut Vec<Delivery>) -> Option<Transition> {
        self.initial_tier.insert(student.clone(), tier);
        self.students.get_mut(student)?.as_mut()?.retarget(tier, out)
    }

    pub fn close_all(&mut self) -> Vec<Transition> {
        let mut out = Vec::new();
        for p in self.students.values_mut().flatten() {
            if let Some(t) = p.close() {
                out.push(t);
            }
        }
        out
    }
}
