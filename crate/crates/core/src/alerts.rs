//! Per-student rules over the telemetry stream: inactivity and repeated
//! incorrect answers.
//!
//! Alerts clear themselves on contrary evidence. Any activity clears an open
//! inactivity alert, and a correct answer clears an open repeated-incorrect
//! alert and empties its window.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::PeerId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertRuleConfig {
    pub inactivity_secs: u64,
    pub incorrect_threshold: u32,
    pub incorrect_window_secs: u64,
}

impl Default for AlertRuleConfig {
    fn default() -> Self {
        AlertRuleConfig {
            inactivity_secs: 120,
            incorrect_threshold: 3,
            incorrect_window_secs: 300,
        }
    }
}

impl AlertRuleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.inactivity_secs == 0 || self.incorrect_threshold == 0 || self.incorrect_window_secs == 0 {
            return Err("alert rule settings must be strictly positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TelemetryKind {
    MouseClick,
    KeyInput,
    AnswerSubmitted { correct: bool },
    Heartbeat,
}

impl TelemetryKind {
    /// Heartbeats prove connectivity, not engagement.
    pub fn is_activity(&self) -> bool {
        !matches!(self, TelemetryKind::Heartbeat)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub student: PeerId,
    pub kind: TelemetryKind,
    pub ts: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlertKind {
    Inactivity { duration_secs: u64 },
    RepeatedIncorrect { count: u32, window_secs: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlertClass {
    Inactivity,
    RepeatedIncorrect,
}

impl AlertKind {
    pub fn class(&self) -> AlertClass {
        match self {
            AlertKind::Inactivity { .. } => AlertClass::Inactivity,
            AlertKind::RepeatedIncorrect { .. } => AlertClass::RepeatedIncorrect,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alert {
    pub student: PeerId,
    pub kind: AlertKind,
    pub raised_at: u64,
    pub cleared_at: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlertUpdate {
    pub raised: Vec<Alert>,
    pub cleared: Vec<Alert>,
}

impl AlertUpdate {
    pub fn is_empty(&self) -> bool {
        self.raised.is_empty() && self.cleared.is_empty()
    }

    pub fn extend(&mut self, other: AlertUpdate) {
        self.raised.extend(other.raised);
        self.cleared.extend(other.cleared);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlertError {
    #[error("student {0} is not tracked")]
    UnknownStudent(PeerId),
}

#[derive(Debug, Clone)]
struct StudentRules {
    last_ts: u64,
    last_activity: u64,
    incorrect: VecDeque<u64>,
    inactivity: Option<Alert>,
    repeated_incorrect: Option<Alert>,
}

#[derive(Debug, Clone)]
pub struct AlertEngine {
    config: AlertRuleConfig,
    students: BTreeMap<PeerId, StudentRules>,
}

impl AlertEngine {
    pub fn new(config: AlertRuleConfig) -> Self {
        AlertEngine {
            config,
            students: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AlertRuleConfig {
        &self.config
    }

    /// Starts tracking a student; joining counts as the first activity.
    pub fn register(&mut self, student: PeerId, now: u64) {
        self.students.insert(
            student,
            StudentRules {
                last_ts: now,
                last_activity: now,
                incorrect: VecDeque::new(),
                inactivity: None,
                repeated_incorrect: None,
            },
        );
    }

    pub fn remove(&mut self, student: &PeerId) {
        self.students.remove(student);
    }

    pub fn is_tracked(&self, student: &PeerId) -> bool {
        self.students.contains_key(student)
    }

    pub fn open_alerts(&self) -> Vec<Alert> {
        self.students
            .values()
            .flat_map(|s| s.inactivity.iter().chain(s.repeated_incorrect.iter()))
            .cloned()
            .collect()
    }

    pub fn ingest(&mut self, event: &TelemetryEvent) -> Result<AlertUpdate, AlertError> {
        let window_ms = self.config.incorrect_window_secs * 1000;
        let threshold = self.config.incorrect_threshold as usize;
        let rules = self
            .students
            .get_mut(&event.student)
            .ok_or_else(|| AlertError::UnknownStudent(event.student.clone()))?;

        // Late events are treated as happening at the last seen time.
        let ts = event.ts.max(rules.last_ts);
        rules.last_ts = ts;

        let mut update = AlertUpdate::default();
        if event.kind.is_activity() {
            rules.last_activity = ts;
            if let Some(mut open) = rules.inactivity.take() {
                open.cleared_at = Some(ts);
                update.cleared.push(open);
            }
        }

        if let TelemetryKind::AnswerSubmitted { correct } = event.kind {
            if correct {
                rules.incorrect.clear();
                if let Some(mut open) = rules.repeated_incorrect.take() {
                    open.cleared_at = Some(ts);
                    update.cleared.push(open);
                }
            } else {
                while rules.incorrect.front().is_some_and(|&t| ts - t > window_ms) {
                    rules.incorrect.pop_front();
                }
                rules.incorrect.push_back(ts);
                if rules.incorrect.len() >= threshold && rules.repeated_incorrect.is_none() {
                    let alert = Alert {
                        student: event.student.clone(),
                        kind: AlertKind::RepeatedIncorrect {
                            count: rules.incorrect.len() as u32,
                            window_secs: self.config.incorrect_window_secs,
                        },
                        raised_at: ts,
                        cleared_at: None,
                    };
                    rules.repeated_incorrect = Some(alert.clone());
                    update.raised.push(alert);
                }
            }
        }
        Ok(update)
    }

    /// Raises inactivity alerts for every student idle for at least the
    /// configured duration. Students are visited in `PeerId` order.
    pub fn tick(&mut self, now: u64) -> AlertUpdate {
        let limit_ms = self.config.inactivity_secs * 1000;
        let mut update = AlertUpdate::default();
        for (student, rules) in self.students.iter_mut() {
            if rules.inactivity.is_some() || now < rules.last_activity {
                continue;
            }
            let idle = now - rules.last_activity;
            if idle >= limit_ms {
                let alert = Alert {
                    student: student.clone(),
                    kind: AlertKind::Inactivity { duration_secs: idle / 1000 },
                    raised_at: now,
                    cleared_at: None,
                };
                rules.inactivity = Some(alert.clone());
                update.raised.push(alert);
            }
        }
        update
    }
}

fn plural(n: u64, unit: &str) -> String {
    if n == 1 {
        format!("{n} {unit}")
    } else {
        format!("{n} {unit}s")
    }
}

/// Whole minutes when the duration divides evenly, seconds otherwise.
pub fn format_duration(secs: u64) -> String {
    if secs > 0 && secs.is_multiple_of(60) {
        plural(secs / 60, "minute")
    } else {
        plural(secs, "second")
    }
}

pub fn render_alert(alert: &Alert, alias: &str) -> String {
    match &alert.kind {
        AlertKind::Inactivity { duration_secs } => {
            format!("{alias} was inactive for {}", format_duration(*duration_secs))
        }
        AlertKind::RepeatedIncorrect { count, window_secs } => format!(
            "{alias} submitted {count} incorrect answers in the last {}",
            format_duration(*window_secs)
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: u64 = 1000;

    fn engine() -> AlertEngine {
        let mut e = AlertEngine::new(AlertRuleConfig::default());
        e.register("a".into(), 0);
        e
    }

    fn answer(ts: u64, correct: bool) -> TelemetryEvent {
        TelemetryEvent {
            student: "a".into(),
            kind: TelemetryKind::AnswerSubmitted { correct },
            ts,
        }
    }

    #[test]
    fn three_incorrect_raise_once_on_the_third() {
        let mut e = engine();
        assert!(e.ingest(&answer(10 * S, false)).unwrap().raised.is_empty());
        assert!(e.ingest(&answer(20 * S, false)).unwrap().raised.is_empty());
        let up = e.ingest(&answer(30 * S, false)).unwrap();
        assert_eq!(up.raised.len(), 1);
        assert_eq!(
            up.raised[0].kind,
            AlertKind::RepeatedIncorrect { count: 3, window_secs: 300 }
        );
        assert!(e.ingest(&answer(40 * S, false)).unwrap().raised.is_empty());
    }

    #[test]
    fn correct_answer_empties_the_window() {
        let mut e = engine();
        for (t, ok) in [(1, false), (2, false), (3, true), (4, false), (5, false)] {
            assert!(e.ingest(&answer(t * S, ok)).unwrap().raised.is_empty());
        }
    }

    #[test]
    fn answers_outside_window_do_not_count() {
        let mut e = engine();
        e.ingest(&answer(0, false)).unwrap();
        e.ingest(&answer(301 * S, false)).unwrap();
        let up = e.ingest(&answer(302 * S, false)).unwrap();
        assert!(up.raised.is_empty());
    }

    #[test]
    fn correct_answer_clears_open_alert() {
        let mut e = engine();
        for t in 1..=3 {
            e.ingest(&answer(t * S, false)).unwrap();
        }
        let up = e.ingest(&answer(4 * S, true)).unwrap();
        assert_eq!(up.cleared.len(), 1);
        assert_eq!(up.cleared[0].cleared_at, Some(4 * S));
        assert!(e.open_alerts().is_empty());
    }

    #[test]
    fn inactivity_threshold_is_inclusive() {
        let mut e = engine();
        assert!(e.tick(119 * S).raised.is_empty());
        let up = e.tick(120 * S);
        assert_eq!(up.raised.len(), 1);
        assert_eq!(up.raised[0].kind, AlertKind::Inactivity { duration_secs: 120 });
        assert!(e.tick(180 * S).raised.is_empty());
    }

    #[test]
    fn heartbeat_is_not_activity() {
        let mut e = engine();
        e.ingest(&TelemetryEvent {
            student: "a".into(),
            kind: TelemetryKind::Heartbeat,
            ts: 100 * S,
        })
        .unwrap();
        assert_eq!(e.tick(120 * S).raised.len(), 1);
    }

    #[test]
    fn activity_clears_inactivity() {
        let mut e = engine();
        e.tick(130 * S);
        let up = e
            .ingest(&TelemetryEvent {
                student: "a".into(),
                kind: TelemetryKind::MouseClick,
                ts: 131 * S,
            })
            .unwrap();
        assert_eq!(up.cleared.len(), 1);
        assert!(e.tick(131 * S).raised.is_empty());
    }

    #[test]
    fn out_of_order_events_are_clamped() {
        let mut e = engine();
        e.ingest(&answer(50 * S, false)).unwrap();
        e.ingest(&answer(40 * S, false)).unwrap();
        let up = e.ingest(&answer(10 * S, false)).unwrap();
        assert_eq!(up.raised[0].raised_at, 50 * S);
    }

    #[test]
    fn unknown_student() {
        let mut e = engine();
        let err = e
            .ingest(&TelemetryEvent {
                student: "zz".into(),
                kind: TelemetryKind::KeyInput,
                ts: 0,
            })
            .unwrap_err();
        assert_eq!(err, AlertError::UnknownStudent("zz".into()));
    }

    #[test]
    fn rendering() {
        let inactive = |secs| Alert {
            student: "x".into(),
            kind: AlertKind::Inactivity { duration_secs: secs },
            raised_at: 0,
            cleared_at: None,
        };
        assert_eq!(
            render_alert(&inactive(120), "Student X"),
            "Student X was inactive for 2 minutes"
        );
        assert_eq!(render_alert(&inactive(90), "A"), "A was inactive for 90 seconds");
        assert_eq!(render_alert(&inactive(60), "A"), "A was inactive for 1 minute");
        let wrong = Alert {
            student: "b".into(),
            kind: AlertKind::RepeatedIncorrect { count: 3, window_secs: 300 },
            raised_at: 0,
            cleared_at: None,
        };
        assert_eq!(
            render_alert(&wrong, "B"),
            "B submitted 3 incorrect answers in the last 5 minutes"
        );
    }
}
