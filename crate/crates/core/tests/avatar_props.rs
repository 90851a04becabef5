use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use tutorlink_core::avatar::{build_timeline, classify_intent, Lexicon, SemanticCue, Viseme};

/// Mapping written out from the character table, independent of the crate.
fn reference(text: &str) -> (Vec<Viseme>, u64) {
    let mut visemes: Vec<Viseme> = Vec::new();
    let mut total = 0u64;
    for c in text.chars() {
        let v = match c.to_ascii_lowercase() {
            'o' | 'u' => Viseme::Round,
            'a' | 'e' | 'i' => Viseme::Open,
            'm' | 'b' | 'p' => Viseme::Closed,
            'f' | 'v' => Viseme::LipTeeth,
            c if c.is_alphabetic() || c.is_numeric() => Viseme::Rest,
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

fn text() -> impl Strategy<Value = String> {
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

#[test]
fn timeline_properties() {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        ..Config::default()
    });
    runner
        .run(&(text(), 0.1f64..10.0), |(text, rate)| {
            let base = build_timeline(&text, 1.0).unwrap();
            base.check().map_err(TestCaseError::fail)?;
            let (visemes, total) = reference(&text);
            prop_assert_eq!(base.visemes(), visemes);
            prop_assert_eq!(base.total_ms, total);
            prop_assert!(base.entries.windows(2).all(|w| w[0].start_ms < w[1].start_ms));
            prop_assert_eq!(text.is_empty(), base.is_empty());

            for r in [rate, 2.0, 0.5] {
                let scaled = build_timeline(&text, r).unwrap();
                scaled.check().map_err(TestCaseError::fail)?;
                prop_assert_eq!(scaled.visemes(), base.visemes());
                let ideal = (base.total_ms as f64 / r).round() as i64;
                let diff = (scaled.total_ms as i64 - ideal).unsigned_abs();
                prop_assert!(
                    diff <= scaled.entries.len() as u64,
                    "rate {} total {} ideal {} entries {}",
                    r,
                    scaled.total_ms,
                    ideal,
                    scaled.entries.len()
                );
            }
            Ok(())
        })
        .unwrap();
}

#[test]
fn documented_timelines() {
    let t = build_timeline("", 1.0).unwrap();
    assert!(t.entries.is_empty() && t.total_ms == 0);
    let t = build_timeline("m", 1.0).unwrap();
    assert_eq!((t.entries[0].viseme, t.entries[0].start_ms, t.entries[0].duration_ms), (Viseme::Closed, 0, 70));
    let t = build_timeline("mm", 1.0).unwrap();
    assert_eq!(t.entries.len(), 1);
    assert_eq!(t.total_ms, 140);
}

proptest! {
    #[test]
    fn classification_is_total_and_deterministic(s in "\\PC{0,200}") {
        let lex = Lexicon::default();
        let a = classify_intent(&s, &lex);
        prop_assert_eq!(a, classify_intent(&s, &lex));
        let any_hit = [&lex.greeting, &lex.encouragement, &lex.corrective]
            .iter()
            .any(|list| list.iter().any(|k| s.to_lowercase().contains(k.as_str())));
        prop_assert_eq!(a == SemanticCue::Neutral, !any_hit);
    }
}
