//! Turns tutor text into avatar commands: a semantic cue picks the gesture and
//! a character-class pass over the text produces the mouth timeline.
//!
//! The timeline is derived from text alone. Audio comes from the student's
//! platform speech engine, so lip-sync is approximate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::PeerId;

pub const VISEME_MS: f64 = 70.0;
pub const SILENCE_MS: f64 = 120.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticCue {
    Greeting,
    Encouragement,
    Corrective,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gesture {
    Wave,
    Nod,
    ThumbsUp,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viseme {
    Rest,
    Open,
    Closed,
    LipTeeth,
    Round,
    Silence,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisemeEntry {
    pub viseme: Viseme,
    pub start_ms: u64,
    pub duration_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisemeTimeline {
    pub entries: Vec<VisemeEntry>,
    pub total_ms: u64,
}

impl VisemeTimeline {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks ordering, non-overlap and the total-duration identity.
    pub fn check(&self) -> Result<(), String> {
        let mut cursor = 0u64;
        for (i, e) in self.entries.iter().enumerate() {
            if e.duration_ms == 0 {
                return Err(format!("entry {i} has zero duration"));
            }
            if e.start_ms != cursor {
                return Err(format!("entry {i} starts at {} but previous ends at {cursor}", e.start_ms));
            }
            cursor = e.start_ms + e.duration_ms;
        }
        if cursor != self.total_ms {
            return Err(format!("total_ms {} but entries end at {cursor}", self.total_ms));
        }
        Ok(())
    }

    pub fn visemes(&self) -> Vec<Viseme> {
        self.entries.iter().map(|e| e.viseme).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvatarCommand {
    pub target: PeerId,
    pub speech_text: String,
    pub show_bubble: bool,
    pub gesture: Gesture,
    pub attention_wave: bool,
    pub timeline: VisemeTimeline,
}

impl AvatarCommand {
    pub fn validate(&self) -> Result<(), String> {
        if !self.timeline.is_empty() && self.speech_text.is_empty() {
            return Err("timeline present but speech text is empty".into());
        }
        Ok(())
    }
}

/// Lowercase keyword lists, matched as substrings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub greeting: Vec<String>,
    pub encouragement: Vec<String>,
    pub corrective: Vec<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            greeting: words(&["hi", "hello", "hey", "welcome", "good morning"]),
            encouragement: words(&[
                "great",
                "good job",
                "well done",
                "nice",
                "excellent",
                "awesome",
                "keep it up",
            ]),
            corrective: words(&[
                "try",
                "instead",
                "incorrect",
                "check",
                "let's break",
                "revisit",
                "step by step",
                "isolating",
            ]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvatarConfig {
    pub lexicon: Lexicon,
    pub canned_prompts: Vec<String>,
    pub speech_rate: f64,
    /// A command or chat within this window suppresses the attention wave.
    pub attention_window_ms: u64,
}

impl Default for AvatarConfig {
    fn default() -> Self {
        AvatarConfig {
            lexicon: Lexicon::default(),
            canned_prompts: words(&[
                "Let's break this down step by step.",
                "Great job, keep it up!",
                "Try checking your last step again.",
                "Hi! Do you need a hand with this one?",
            ]),
            speech_rate: 1.0,
            attention_window_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AvatarError {
    #[error("speech rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("avatar text is empty")]
    EmptyText,
}

fn hits(text: &str, keywords: &[String]) -> usize {
    keywords
        .iter()
        .filter(|k| !k.is_empty())
        .map(|k| text.matches(k.to_lowercase().as_str()).count())
        .sum()
}

/// Most keyword hits wins; ties go to Greeting, then Encouragement, then
/// Corrective. Zero hits is Neutral.
pub fn classify_intent(text: &str, lexicon: &Lexicon) -> SemanticCue {
    let lowered = text.to_lowercase();
    let scored = [
        (SemanticCue::Greeting, hits(&lowered, &lexicon.greeting)),
        (SemanticCue::Encouragement, hits(&lowered, &lexicon.encouragement)),
        (SemanticCue::Corrective, hits(&lowered, &lexicon.corrective)),
    ];
    let mut best = (SemanticCue::Neutral, 0);
    for (cue, n) in scored {
        if n > best.1 {
            best = (cue, n);
        }
    }
    best.0
}

pub fn gesture_for(cue: SemanticCue) -> Gesture {
    match cue {
        SemanticCue::Greeting => Gesture::Wave,
        SemanticCue::Encouragement => Gesture::ThumbsUp,
        SemanticCue::Corrective => Gesture::Nod,
        SemanticCue::Neutral => Gesture::None,
    }
}

fn viseme_of(c: char) -> Viseme {
    match c.to_ascii_lowercase() {
        'a' | 'e' | 'i' => Viseme::Open,
        'o' | 'u' => Viseme::Round,
        'm' | 'b' | 'p' => Viseme::Closed,
        'f' | 'v' => Viseme::LipTeeth,
        c if c.is_alphanumeric() => Viseme::Rest,
        _ => Viseme::Silence,
    }
}

/// Builds the mouth timeline for `text` spoken at `rate` times normal speed.
///
/// A run of identical visemes becomes one entry whose length is rounded once
/// from the exact sum, so merged entries carry at most half a millisecond of
/// rounding error. Entries are at least 1 ms long.
pub fn build_timeline(text: &str, rate: f64) -> Result<VisemeTimeline, AvatarError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(AvatarError::InvalidRate(rate));
    }

    let mut runs: Vec<(Viseme, u64)> = Vec::new();
    for c in text.chars() {
        let v = viseme_of(c);
        match runs.last_mut() {
            // A silence run is a single unit however many characters it spans.
            Some((last, _)) if *last == v && v == Viseme::Silence => {}
            Some((last, units)) if *last == v => *units += 1,
            _ => runs.push((v, 1)),
        }
    }

    let mut entries = Vec::with_capacity(runs.len());
    let mut cursor = 0u64;
    for (viseme, units) in runs {
        let unit_ms = if viseme == Viseme::Silence { SILENCE_MS } else { VISEME_MS };
        let duration_ms = ((units as f64 * unit_ms / rate).round() as u64).max(1);
        entries.push(VisemeEntry {
            viseme,
            start_ms: cursor,
            duration_ms,
        });
        cursor += duration_ms;
    }
    Ok(VisemeTimeline {
        entries,
        total_ms: cursor,
    })
}

/// Composes the command for one dispatch; the caller decides the wave.
pub fn compose_command(
    target: PeerId,
    text: &str,
    show_bubble: bool,
    attention_wave: bool,
    config: &AvatarConfig,
) -> Result<AvatarCommand, AvatarError> {
    if text.trim().is_empty() {
        return Err(AvatarError::EmptyText);
    }
    let cue = classify_intent(text, &config.lexicon);
    Ok(AvatarCommand {
        target,
        speech_text: text.to_owned(),
        show_bubble,
        gesture: gesture_for(cue),
        attention_wave,
        timeline: build_timeline(text, config.speech_rate)?,
    })
}

pub fn canned_prompts(config: &AvatarConfig) -> &[String] {
    &config.canned_prompts
}

#[cfg(test)]
mod tests {
    use super::*;

    const HINT: &str = "To solve for k, first try isolating k on one side of the equation.";

    #[test]
    fn classification_examples() {
        let lex = Lexicon::default();
        assert_eq!(classify_intent("", &lex), SemanticCue::Neutral);
        assert_eq!(classify_intent("Great job, well done!", &lex), SemanticCue::Encouragement);
        assert_eq!(classify_intent(HINT, &lex), SemanticCue::Corrective);
        assert_eq!(classify_intent("Hello there", &lex), SemanticCue::Greeting);
        assert_eq!(classify_intent("The answer is 3", &lex), SemanticCue::Neutral);
    }

    #[test]
    fn ties_resolve_by_priority() {
        // one greeting hit and one encouragement hit
        let lex = Lexicon::default();
        assert_eq!(classify_intent("hello, nice", &lex), SemanticCue::Greeting);
        assert_eq!(classify_intent("nice, try", &lex), SemanticCue::Encouragement);
    }

    #[test]
    fn gestures() {
        assert_eq!(gesture_for(SemanticCue::Greeting), Gesture::Wave);
        assert_eq!(gesture_for(SemanticCue::Encouragement), Gesture::ThumbsUp);
        assert_eq!(gesture_for(SemanticCue::Corrective), Gesture::Nod);
        assert_eq!(gesture_for(SemanticCue::Neutral), Gesture::None);
    }

    #[test]
    fn timeline_examples() {
        let empty = build_timeline("", 1.0).unwrap();
        assert!(empty.entries.is_empty());
        assert_eq!(empty.total_ms, 0);

        let m = build_timeline("m", 1.0).unwrap();
        assert_eq!(
            m.entries,
            vec![VisemeEntry { viseme: Viseme::Closed, start_ms: 0, duration_ms: 70 }]
        );
        assert_eq!(m.total_ms, 70);

        let mm = build_timeline("mm", 1.0).unwrap();
        assert_eq!(
            mm.entries,
            vec![VisemeEntry { viseme: Viseme::Closed, start_ms: 0, duration_ms: 140 }]
        );
    }

    #[test]
    fn character_classes() {
        let t = build_timeline("am of, tk", 1.0).unwrap();
        assert_eq!(
            t.visemes(),
            vec![
                Viseme::Open,
                Viseme::Closed,
                Viseme::Silence,
                Viseme::Round,
                Viseme::LipTeeth,
                Viseme::Silence,
                Viseme::Rest,
            ]
        );
        // ", " is one silence of 120 ms
        assert_eq!(t.entries[5].duration_ms, 120);
        assert_eq!(t.entries[6].duration_ms, 140);
        assert_eq!(t.total_ms, 70 * 6 + 120 * 2);
        t.check().unwrap();
    }

    #[test]
    fn rate_scales_durations() {
        let t = build_timeline("m m", 2.0).unwrap();
        assert_eq!(t.entries.iter().map(|e| e.duration_ms).collect::<Vec<_>>(), vec![35, 60, 35]);
        assert!(matches!(build_timeline("m", 0.0), Err(AvatarError::InvalidRate(_))));
        assert!(matches!(build_timeline("m", -1.0), Err(AvatarError::InvalidRate(_))));
        assert!(matches!(build_timeline("m", f64::NAN), Err(AvatarError::InvalidRate(_))));
    }

    #[test]
    fn hint_command() {
        let cfg = AvatarConfig::default();
        let cmd = compose_command("s1".into(), HINT, true, true, &cfg).unwrap();
        assert_eq!(cmd.gesture, Gesture::Nod);
        assert!(cmd.attention_wave);
        assert!(!cmd.timeline.is_empty());
        cmd.timeline.check().unwrap();
        assert!(matches!(
            compose_command("s1".into(), "  ", true, false, &cfg),
            Err(AvatarError::EmptyText)
        ));
    }

    #[test]
    fn prompts_pass_through() {
        let cfg = AvatarConfig::default();
        assert!(canned_prompts(&cfg).iter().any(|p| p == "Let's break this down step by step."));
        let mut cfg = AvatarConfig::default();
        cfg.canned_prompts.clear();
        assert!(canned_prompts(&cfg).is_empty());
        cfg.canned_prompts = (1..=5).map(|i| format!("prompt {i}")).collect();
        assert_eq!(canned_prompts(&cfg), cfg.canned_prompts.as_slice());
    }
}
