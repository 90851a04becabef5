//! Whole-criterion checks that report a summary or the first counterexample.
//! The acceptance target prints their outcomes; the per-crate suites hold the
//! finer-grained versions.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::rngs::StdRng;
use rand::SeedableRng;

use tutorlink_core::alerts::{AlertEngine, AlertRuleConfig, AlertUpdate, TelemetryEvent};
use tutorlink_core::avatar::{build_timeline, Viseme};
use tutorlink_core::protocol::{decode, encode, Delivery, MessageKind, PeerId};
use tutorlink_core::quality::{allocate, QualityError, TierName, TierTable};
use tutorlink_core::signaling::{Direction, Pairing, PairingState, SignalError, SignalInput};

use crate::alert_oracle::{self, Oracle, Output, Step};
use crate::{fuzz, gen, quality_oracle, signaling_driver};

pub type Check = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

/// decode(encode(e)) == e over `cases` generated envelopes, which must cover
/// every message kind.
pub fn protocol_round_trip(cases: u32) -> Check {
    let seen = RefCell::new(HashSet::new());
    runner(cases)
        .run(&gen::envelope(), |env| {
            seen.borrow_mut().insert(env.kind());
            let frame = encode(&env).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = decode(frame.as_bytes()).map_err(|e| TestCaseError::fail(format!("{e}: {frame}")))?;
            prop_assert_eq!(back, env);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let kinds = seen.into_inner().len();
    if kinds != MessageKind::ALL.len() {
        return Err(format!("only {kinds} of {} kinds generated", MessageKind::ALL.len()));
    }
    Ok(format!("{cases} envelopes, {kinds} kinds"))
}

/// Fuzzed frames decode to a typed error (or a valid envelope), never a panic.
pub fn protocol_fuzz(cases: u32) -> Check {
    let rejected = Cell::new(0u32);
    runner(cases)
        .run(&fuzz::frame(), |bytes| {
            let outcome = std::panic::catch_unwind(|| decode(&bytes)).map_err(|_| TestCaseError::fail("panic"))?;
            match outcome {
                Ok(env) => {
                    let frame = encode(&env).map_err(|e| TestCaseError::fail(e.to_string()))?;
                    prop_assert_eq!(decode(frame.as_bytes()).ok(), Some(env));
                }
                Err(e) => {
                    prop_assert!(!e.code().is_empty());
                    rejected.set(rejected.get() + 1);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} frames, {} rejected with typed errors", rejected.get()))
}

fn feed_ids(n: usize) -> Vec<PeerId> {
    // input order differs from id order
    (0..n).map(|i| PeerId::new(format!("p{}", (i * 5 + 3) % 7))).collect()
}

/// Exhaustive comparison with the brute-force allocator: feed counts 0..=6,
/// budgets 0..=5000 step 100, and seven zoom choices per count (none, or one
/// of six slots; a slot beyond the feed count names a peer outside the set,
/// which must be refused).
pub fn quality_exhaustive() -> Check {
    let tiers = TierTable::default();
    let mut cases = 0usize;
    for n in 0..=6 {
        let feeds = feed_ids(n);
        for budget in (0..=5000u64).step_by(100) {
            for choice in 0..7usize {
                cases += 1;
                let zoom = match choice {
                    0 => None,
                    c if c - 1 < n => Some(feeds[c - 1].clone()),
                    c => Some(PeerId::new(format!("outside{c}"))),
                };
                let got = allocate(&feeds, zoom.as_ref(), budget, &tiers);
                let outside = zoom.as_ref().is_some_and(|z| !feeds.contains(z));
                if outside {
                    match got {
                        Err(QualityError::ZoomTargetNotInFeeds(_)) => continue,
                        other => return Err(format!("n={n} budget={budget} zoom={zoom:?}: {other:?}")),
                    }
                }
                let got = got.map_err(|e| format!("n={n} budget={budget}: {e}"))?;
                let want = quality_oracle::allocate(&feeds, zoom.as_ref(), budget, &tiers);
                if (got.assignments.clone(), got.total_kbps, got.over_budget)
                    != (want.assignments.clone(), want.total_kbps, want.over_budget)
                {
                    return Err(format!("n={n} budget={budget} zoom={zoom:?}: got {got:?}, want {want:?}"));
                }
            }
        }
    }
    Ok(format!("{cases} cases match brute force"))
}

/// Zoom dominance and budget respect on random inputs.
pub fn quality_invariants(cases: u32) -> Check {
    let tiers = TierTable::default();
    let input = (
        proptest::collection::vec("[a-z]{1,3}".prop_map(PeerId::new), 0..12),
        proptest::option::of(any::<usize>()),
        0u64..8000,
    );
    runner(cases)
        .run(&input, |(feeds, z, budget)| {
            let zoomed = z.and_then(|i| (!feeds.is_empty()).then(|| feeds[i % feeds.len()].clone()));
            let a = allocate(&feeds, zoomed.as_ref(), budget, &tiers).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let sum: u64 = a.assignments.iter().map(|(_, t)| tiers.kbps(*t)).sum();
            prop_assert_eq!(sum, a.total_kbps);
            if !a.over_budget {
                prop_assert!(a.total_kbps <= budget);
            }
            prop_assert!(a.assignments.iter().filter(|(_, t)| *t > TierName::Low).count() <= 1);
            if let Some(z) = &zoomed {
                let zt = a.tier_of(z).expect("zoomed feed is assigned");
                prop_assert!(a.assignments.iter().all(|(_, t)| *t <= zt));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} random inputs"))
}

fn apply_alert_step(engine: &mut AlertEngine, step: &Step) -> AlertUpdate {
    match step {
        Step::Register { student, at } => {
            engine.register(student.clone(), *at);
            AlertUpdate::default()
        }
        Step::Ingest { student, kind, ts } => engine
            .ingest(&TelemetryEvent {
                student: student.clone(),
                kind: kind.clone(),
                ts: *ts,
            })
            .unwrap_or_default(),
        Step::Tick { now } => engine.tick(*now),
    }
}

/// The incremental engine against the re-scan oracle on random sequences of
/// up to 50 events over up to 5 students.
pub fn alert_equivalence(cases: u32) -> Check {
    let raised = Cell::new(0usize);
    let cleared = Cell::new(0usize);
    runner(cases)
        .run(&alert_oracle::steps(50, 5), |steps| {
            let config = AlertRuleConfig::default();
            let mut engine = AlertEngine::new(config.clone());
            let mut oracle = Oracle::new(config);
            for (i, step) in steps.iter().enumerate() {
                let got = apply_alert_step(&mut engine, step);
                let want = oracle.step(step);
                raised.set(raised.get() + want.raised.len());
                cleared.set(cleared.get() + want.cleared.len());
                prop_assert_eq!(
                    Output {
                        raised: got.raised,
                        cleared: got.cleared
                    },
                    want,
                    "step {} {:?}",
                    i,
                    step
                );
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{cases} sequences, {} raises and {} clears compared",
        raised.get(),
        cleared.get()
    ))
}

/// The pairing machine's documented table, transcribed from the module docs.
const TABLE: [(PairingState, [Option<PairingState>; 5]); 5] = {
    use PairingState::*;
    [
        // Offer, Answer, Candidate, QualityRequest, Close
        (Idle, [Some(OfferPending), None, Some(Idle), None, Some(Closed)]),
        (OfferPending, [None, Some(Connected), Some(OfferPending), None, Some(Closed)]),
        (Connected, [None, None, Some(Connected), Some(Renegotiating), Some(Closed)]),
        (Renegotiating, [Some(OfferPending), None, Some(Renegotiating), None, Some(Closed)]),
        (Closed, [None, None, None, None, Some(Closed)]),
    ]
};

fn drive(p: &mut Pairing, input: SignalInput, out: &mut Vec<Delivery>) -> Result<(), SignalError> {
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

fn pairing_in(state: PairingState) -> Result<Pairing, String> {
    use PairingState::*;
    let mut p = Pairing::new(PeerId::new("s0001"), PeerId::new("tutor"), TierName::Low);
    let path: &[SignalInput] = match state {
        Idle => &[],
        OfferPending => &[SignalInput::Offer],
        Connected => &[SignalInput::Offer, SignalInput::Answer],
        Renegotiating => &[SignalInput::Offer, SignalInput::Answer, SignalInput::QualityRequest],
        Closed => &[SignalInput::Close],
    };
    let mut out = Vec::new();
    for input in path {
        drive(&mut p, *input, &mut out).map_err(|e| format!("reaching {state:?}: {e}"))?;
    }
    Ok(p)
}

/// Every (state, input) pair applied to a live machine, compared with the
/// table. Illegal inputs must leave the state alone and deliver nothing.
pub fn signaling_table() -> Check {
    let mut pairs = 0;
    for (state, row) in TABLE {
        for (input, expected) in SignalInput::ALL.into_iter().zip(row) {
            pairs += 1;
            let mut p = pairing_in(state)?;
            let mut out = Vec::new();
            let result = drive(&mut p, input, &mut out);
            let ok = match expected {
                Some(next) => result.is_ok() && p.state() == next,
                None => result.is_err() && p.state() == state && out.is_empty(),
            };
            if !ok {
                return Err(format!(
                    "{state:?} x {input:?}: expected {expected:?}, got {result:?} -> {:?}",
                    p.state()
                ));
            }
        }
    }
    Ok(format!("{pairs} (state, input) pairs match the table"))
}

/// Random legal interleavings of `messages` relayed payloads per pairing;
/// each direction must arrive in send order.
pub fn signaling_fifo(pairings: u64, messages: usize) -> Check {
    let mut total = 0;
    for seed in 0..pairings {
        let mut rng = StdRng::seed_from_u64(seed);
        let report = signaling_driver::run(&mut rng, messages);
        if !report.ordered() {
            return Err(format!("seed {seed}: order broken"));
        }
        total += report.sent;
    }
    Ok(format!("{pairings} pairings, {total} messages in order"))
}

/// Character classes written out independently of the crate.
fn reference_visemes(text: &str) -> (Vec<Viseme>, u64) {
    let mut visemes: Vec<Viseme> = Vec::new();
    let mut total = 0u64;
    for c in text.chars() {
        let v = match c.to_ascii_lowercase() {
            'o' | 'u' => Viseme::Round,
            'a' | 'e' | 'i' => Viseme::Open,
            'm' | 'b' | 'p' => Viseme::Closed,
            'f' | 'v' => Viseme::LipTeeth,
            c if c.is_alphanumeric() => Viseme::Rest,
            _ => Viseme::Silence,
        };
        let merges = visemes.last() == Some(&v);
        match (v, merges) {
            (Viseme::Silence, true) => {}
            (Viseme::Silence, false) => total += 120,
            _ => total += 70,
        }
        if !merges {
            visemes.push(v);
        }
    }
    (visemes, total)
}

pub fn speech_text() -> impl Strategy<Value = String> {
    let speechy = proptest::collection::vec(
        prop_oneof![
            6 => proptest::char::range('a', 'z'),
            1 => proptest::char::range('A', 'Z'),
            2 => Just(' '),
            1 => proptest::sample::select(vec![',', '.', '!', '?', '\'', '-', '\n', '3', '=', '+']),
        ],
        0..=2000,
    );
    let wild = proptest::collection::vec(any::<char>(), 0..=2000);
    prop_oneof![3 => speechy, 1 => wild].prop_map(|cs| cs.into_iter().collect())
}

/// Well-formedness and rate scaling of viseme timelines.
pub fn viseme_properties(cases: u32) -> Check {
    runner(cases)
        .run(&(speech_text(), 0.1f64..10.0), |(text, rate)| {
            let base = build_timeline(&text, 1.0).map_err(|e| TestCaseError::fail(e.to_string()))?;
            base.check().map_err(TestCaseError::fail)?;
            let (visemes, total) = reference_visemes(&text);
            prop_assert_eq!(base.visemes(), visemes);
            prop_assert_eq!(base.total_ms, total);
            for r in [rate, 2.0, 0.5] {
                let scaled = build_timeline(&text, r).map_err(|e| TestCaseError::fail(e.to_string()))?;
                scaled.check().map_err(TestCaseError::fail)?;
                prop_assert_eq!(scaled.visemes(), base.visemes());
                // each entry rounds once: at most 1 ms drift per entry
                let ideal = (base.total_ms as f64 / r).round() as i64;
                let diff = (scaled.total_ms as i64 - ideal).unsigned_abs();
                prop_assert!(diff <= scaled.entries.len() as u64, "rate {} drift {}", r, diff);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} texts up to 2000 chars"))
}
