use std::cell::RefCell;
use std::collections::HashSet;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, TestRunner};
use tutorlink_core::protocol::{decode, encode, Envelope, MessageKind, ProtocolError, SeqTracker};
use tutorlink_testkit::{fuzz, gen};

#[test]
fn round_trip_covers_every_kind() {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        ..Config::default()
    });
    let seen = RefCell::new(HashSet::new());
    runner
        .run(&gen::envelope(), |env| {
            seen.borrow_mut().insert(env.kind().wire_name());
            let frame = encode(&env).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = decode(frame.as_bytes()).map_err(|e| TestCaseError::fail(format!("{e}: {frame}")))?;
            prop_assert_eq!(&back, &env);
            // canonical: re-encoding is byte-identical
            prop_assert_eq!(encode(&back).unwrap(), frame);
            Ok(())
        })
        .unwrap();
    assert_eq!(seen.into_inner().len(), MessageKind::ALL.len());
}

#[test]
fn field_order_is_fixed() {
    let mut runner = TestRunner::default();
    runner
        .run(&gen::envelope(), |env| {
            let frame = encode(&env).unwrap();
            let keys = ["\"v\":", "\"seq\":", "\"ts\":", "\"session\":", "\"sender\":", "\"type\":", "\"payload\":"];
            let positions: Vec<usize> = keys.iter().map(|k| frame.find(k).unwrap()).collect();
            prop_assert!(positions.windows(2).all(|w| w[0] < w[1]), "{}", frame);
            prop_assert!(frame.starts_with(r#"{"v":1,"#), "{}", frame);
            Ok(())
        })
        .unwrap();
}

#[test]
fn fuzzed_frames_yield_typed_errors() {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        ..Config::default()
    });
    runner
        .run(&fuzz::frame(), |bytes| {
            let result = std::panic::catch_unwind(|| decode(&bytes));
            let outcome = result.map_err(|_| TestCaseError::fail("decode panicked"))?;
            match outcome {
                Ok(env) => {
                    // anything accepted must be a valid, re-encodable envelope
                    let frame = encode(&env).map_err(|e| TestCaseError::fail(e.to_string()))?;
                    prop_assert_eq!(decode(frame.as_bytes()).unwrap(), env);
                }
                Err(
                    ProtocolError::InvalidEnvelope(_)
                    | ProtocolError::MalformedFrame(_)
                    | ProtocolError::UnknownKind(_)
                    | ProtocolError::VersionMismatch(_),
                ) => {}
            }
            Ok(())
        })
        .unwrap();
}

proptest! {
    #[test]
    fn seq_tracker_accepts_exactly_the_next(seqs in proptest::collection::vec(1u64..8, 0..40)) {
        let mut tracker = SeqTracker::default();
        let mut expected = 1u64;
        for s in seqs {
            let ok = tracker.accept(s).is_ok();
            prop_assert_eq!(ok, s == expected);
            if ok {
                expected += 1;
            }
        }
    }

    #[test]
    fn other_versions_are_rejected(env in gen::envelope(), v in 2u64..1000) {
        let frame = encode(&env).unwrap().replacen("{\"v\":1,", &format!("{{\"v\":{v},"), 1);
        prop_assert_eq!(decode(frame.as_bytes()), Err(ProtocolError::VersionMismatch(v)));
    }
}

#[test]
fn invalid_envelopes_do_not_encode() {
    let mut env: Envelope = gen::envelope()
        .new_tree(&mut TestRunner::default())
        .unwrap()
        .current();
    env.seq = 0;
    assert!(matches!(encode(&env), Err(ProtocolError::InvalidEnvelope(_))));
}
