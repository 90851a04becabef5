//! Drives one pairing through random but legal signaling traffic and checks
//! that each direction's relayed payloads arrive in send order.

use rand::seq::SliceRandom;
use rand::Rng;

use tutorlink_core::protocol::{Delivery, Payload, PeerId};
use tutorlink_core::quality::TierName;
use tutorlink_core::signaling::{PairingState, Signaling};

#[derive(Debug, Default)]
pub struct FifoReport {
    pub sent: usize,
    pub to_tutor_sent: Vec<String>,
    pub to_tutor_seen: Vec<String>,
    pub to_student_sent: Vec<String>,
    pub to_student_seen: Vec<String>,
}

impl FifoReport {
    pub fn ordered(&self) -> bool {
        self.to_tutor_sent == self.to_tutor_seen && self.to_student_sent == self.to_student_seen
    }
}

fn tag(d: &Delivery) -> Option<String> {
    match &d.payload {
        Payload::Offer(b) | Payload::Answer(b) => Some(b.sdp.clone()),
        Payload::IceCandidate(b) => Some(b.candidate.clone()),
        _ => None,
    }
}

/// Sends `messages` relayed payloads between one tutor and one student,
/// interleaving candidates from both sides with offers, answers and tier
/// requests, chosen so every step is legal in the current state.
pub fn run(rng: &mut impl Rng, messages: usize) -> FifoReport {
    let tutor = PeerId::new("tutor");
    let student = PeerId::new("s0001");
    let mut sig = Signaling::new();
    let mut out = Vec::new();
    sig.add_student(student.clone());
    sig.bind_tutor(tutor.clone(), &mut out);
    out.clear();

    let mut report = FifoReport::default();
    let mut n = 0usize;
    while report.sent < messages {
        n += 1;
        let state = sig.pairing(&student).expect("paired").state();
        let mut choices = vec!["cand_s", "cand_t"];
        match state {
            PairingState::Idle | PairingState::Renegotiating => choices.push("offer"),
            PairingState::OfferPending => choices.push("answer"),
            PairingState::Connected => choices.push("tier"),
            PairingState::Closed => unreachable!("never closed here"),
        }
        let pick = *choices.choose(rng).expect("non-empty");
        match pick {
            "cand_s" => {
                let c = format!("s-cand-{n}");
                sig.relay_candidate(&student, &tutor, c.clone(), &mut out).expect("candidate");
                report.to_tutor_sent.push(c);
            }
            "cand_t" => {
                let c = format!("t-cand-{n}");
                sig.relay_candidate(&tutor, &student, c.clone(), &mut out).expect("candidate");
                report.to_student_sent.push(c);
            }
            "offer" => {
                let o = format!("offer-{n}");
                sig.relay_offer(&student, &tutor, o.clone(), &mut out).expect("offer");
                report.to_tutor_sent.push(o);
            }
            "answer" => {
                let a = format!("answer-{n}");
                sig.relay_answer(&tutor, &student, a.clone(), &mut out).expect("answer");
                report.to_student_sent.push(a);
            }
            _ => {
                let tier = *[TierName::High, TierName::Mid, TierName::Low].choose(rng).expect("non-empty");
                sig.request_renegotiation(&tutor, &student, tier, &mut out).expect("tier");
                continue;
            }
        }
        report.sent += 1;
    }
    // a final offer/answer round releases anything still queued while idle
    let state = sig.pairing(&student).expect("paired").state();
    if matches!(state, PairingState::Idle | PairingState::Renegotiating) {
        sig.relay_offer(&student, &tutor, "final-offer".into(), &mut out).expect("offer");
        report.to_tutor_sent.push("final-offer".into());
    }

    for d in &out {
        if let Some(t) = tag(d) {
            if d.to == tutor {
                report.to_tutor_seen.push(t);
            } else if d.to == student {
                report.to_student_seen.push(t);
            }
        }
    }
    report
}
