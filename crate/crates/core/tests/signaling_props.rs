use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use tutorlink_core::protocol::{Payload, PeerId, QualityRequest};
use tutorlink_core::quality::TierName;
use tutorlink_core::signaling::{transition, Pairing, PairingState, SignalError, SignalInput, Signaling};
use tutorlink_testkit::signaling_driver;

use PairingState::*;

/// The table as written in the module docs, transcribed row by row.
const TABLE: [(PairingState, [Option<PairingState>; 5]); 5] = [
    // Offer, Answer, Candidate, QualityRequest, Close
    (Idle, [Some(OfferPending), None, Some(Idle), None, Some(Closed)]),
    (OfferPending, [None, Some(Connected), Some(OfferPending), None, Some(Closed)]),
    (Connected, [None, None, Some(Connected), Some(Renegotiating), Some(Closed)]),
    (Renegotiating, [Some(OfferPending), None, Some(Renegotiating), None, Some(Closed)]),
    (Closed, [None, None, None, None, Some(Closed)]),
];

fn tutor() -> PeerId {
    PeerId::new("tutor")
}

fn student() -> PeerId {
    PeerId::new("s0001")
}

/// Drives a fresh pairing into `state` through the public operations.
fn pairing_in(state: PairingState) -> Pairing {
    let mut p = Pairing::new(student(), tutor(), TierName::Low);
    let mut out = Vec::new();
    let path: &[SignalInput] = match state {
        Idle => &[],
        OfferPending => &[SignalInput::Offer],
        Connected => &[SignalInput::Offer, SignalInput::Answer],
        Renegotiating => &[SignalInput::Offer, SignalInput::Answer, SignalInput::QualityRequest],
        Closed => &[SignalInput::Close],
    };
    for input in path {
        apply(&mut p, *input, &mut out).unwrap();
    }
    assert_eq!(p.state(), state);
    p
}

fn apply(p: &mut Pairing, input: SignalInput, out: &mut Vec<tutorlink_core::protocol::Delivery>) -> Result<(), SignalError> {
    use tutorlink_core::signaling::Direction;
    match input {
        SignalInput::Offer => p.offer("o".into(), out).map(drop),
        SignalInput::Answer => p.answer("a".into(), out).map(drop),
        SignalInput::Candidate => p.candidate(Direction::ToTutor, "c".into(), out),
        SignalInput::QualityRequest => p.request_tier(TierName::High, out).map(drop),
        SignalInput::Close => {
            p.close();
            Ok(())
        }
    }
}

#[test]
fn exhaustive_table() {
    for (state, row) in TABLE {
        for (input, expected) in SignalInput::ALL.into_iter().zip(row) {
            assert_eq!(transition(state, input), expected, "{state:?} × {input:?}");

            let mut p = pairing_in(state);
            let mut out = Vec::new();
            let result = apply(&mut p, input, &mut out);
            match expected {
                Some(next) => {
                    assert!(result.is_ok(), "{state:?} × {input:?}: {result:?}");
                    assert_eq!(p.state(), next);
                }
                None => {
                    match (state, input) {
                        (Closed, SignalInput::Candidate) => {
                            assert!(matches!(result, Err(SignalError::NotPaired { .. })))
                        }
                        _ => assert_eq!(result, Err(SignalError::IllegalTransition { state, input })),
                    }
                    assert_eq!(p.state(), state, "illegal input must not move the machine");
                    assert!(out.is_empty(), "illegal input must not deliver");
                }
            }
        }
    }
}

#[test]
fn fifo_over_random_interleavings() {
    for seed in 0..20 {
        let mut rng = StdRng::seed_from_u64(seed);
        let report = signaling_driver::run(&mut rng, 1_000);
        assert!(report.sent >= 1_000);
        assert!(report.ordered(), "seed {seed}");
        assert!(report.to_tutor_sent.len() > 100 && report.to_student_sent.len() > 100);
    }
}

#[test]
fn scripted_handshake_and_renegotiations() {
    let mut sig = Signaling::new();
    let mut out = Vec::new();
    sig.add_student(student());
    sig.bind_tutor(tutor(), &mut out);
    out.clear();
    sig.relay_offer(&student(), &tutor(), "o".into(), &mut out).unwrap();
    sig.relay_answer(&tutor(), &student(), "a".into(), &mut out).unwrap();
    for i in 0..4 {
        sig.relay_candidate(&student(), &tutor(), format!("s{i}"), &mut out).unwrap();
        sig.relay_candidate(&tutor(), &student(), format!("t{i}"), &mut out).unwrap();
    }
    assert_eq!(sig.pairing(&student()).unwrap().state(), Connected);
    assert_eq!(sig.pairing(&student()).unwrap().retained_payload_bytes(), 0);

    // zoom then un-zoom: two full cycles, final tier Low
    for tier in [TierName::High, TierName::Low] {
        out.clear();
        sig.retarget(&student(), tier, &mut out);
        assert!(matches!(
            &out[..],
            [d] if d.payload == Payload::QualityRequest(QualityRequest::Tier { to: student(), tier })
        ));
        assert_eq!(sig.pairing(&student()).unwrap().state(), Renegotiating);
        assert!(matches!(
            sig.request_renegotiation(&tutor(), &student(), tier, &mut out),
            Err(SignalError::IllegalTransition { .. })
        ));
        sig.relay_offer(&student(), &tutor(), "o".into(), &mut out).unwrap();
        sig.relay_answer(&tutor(), &student(), "a".into(), &mut out).unwrap();
        assert_eq!(sig.pairing(&student()).unwrap().current_tier(), tier);
    }

    let other = PeerId::new("s0002");
    sig.add_student(other.clone());
    assert!(matches!(
        sig.relay_offer(&student(), &other, "o".into(), &mut out),
        Err(SignalError::RoleViolation(_))
    ));
    assert!(matches!(
        sig.relay_answer(&tutor(), &student(), "a".into(), &mut out),
        Err(SignalError::IllegalTransition { .. })
    ));
    sig.remove_student(&student());
    assert!(matches!(
        sig.relay_candidate(&student(), &tutor(), "c".into(), &mut out),
        Err(SignalError::NotPaired { .. })
    ));
}

proptest! {
    #[test]
    fn fifo_for_any_seed(seed in any::<u64>(), n in 1usize..300) {
        let report = signaling_driver::run(&mut StdRng::seed_from_u64(seed), n);
        prop_assert!(report.ordered());
    }
}
