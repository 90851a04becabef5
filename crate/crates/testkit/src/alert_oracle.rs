//! Re-scan reference for the alert rules. Every step recomputes the rule
//! conditions from the full history instead of keeping incremental state.

use tutorlink_core::alerts::{Alert, AlertKind, AlertRuleConfig, TelemetryKind};
use tutorlink_core::protocol::PeerId;

#[derive(Clone, Debug)]
pub enum Step {
    Register { student: PeerId, at: u64 },
    Ingest { student: PeerId, kind: TelemetryKind, ts: u64 },
    Tick { now: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Output {
    pub raised: Vec<Alert>,
    pub cleared: Vec<Alert>,
}

#[derive(Clone, Debug)]
struct Seen {
    student: PeerId,
    kind: TelemetryKind,
    ts: u64,
}

pub struct Oracle {
    config: AlertRuleConfig,
    registered: Vec<(PeerId, u64)>,
    history: Vec<Seen>,
    emitted: Vec<Alert>,
}

impl Oracle {
    pub fn new(config: AlertRuleConfig) -> Self {
        Oracle {
            config,
            registered: Vec::new(),
            history: Vec::new(),
            emitted: Vec::new(),
        }
    }

    fn events_of<'a>(&'a self, s: &'a PeerId) -> impl Iterator<Item = &'a Seen> + 'a {
        self.history.iter().filter(move |e| &e.student == s)
    }

    fn open(&self, s: &PeerId, inactivity: bool) -> Option<usize> {
        self.emitted.iter().rposition(|a| {
            &a.student == s && matches!(a.kind, AlertKind::Inactivity { .. }) == inactivity && a.cleared_at.is_none()
        })
    }

    fn registration(&self, s: &PeerId) -> Option<u64> {
        self.registered.iter().rev().find(|(p, _)| p == s).map(|(_, t)| *t)
    }

    pub fn step(&mut self, step: &Step) -> Output {
        let mut out = Output::default();
        match step {
            Step::Register { student, at } => {
                self.registered.push((student.clone(), *at));
                self.history.retain(|e| &e.student != student);
                self.emitted.retain(|a| &a.student != student);
            }
            Step::Ingest { student, kind, ts } => {
                let Some(reg) = self.registration(student) else {
                    return out;
                };
                let last = self.events_of(student).map(|e| e.ts).max().unwrap_or(reg);
                let ts = (*ts).max(last);
                self.history.push(Seen {
                    student: student.clone(),
                    kind: kind.clone(),
                    ts,
                });
                if kind.is_activity() {
                    if let Some(i) = self.open(student, true) {
                        self.emitted[i].cleared_at = Some(ts);
                        out.cleared.push(self.emitted[i].clone());
                    }
                }
                match kind {
                    TelemetryKind::AnswerSubmitted { correct: true } => {
                        if let Some(i) = self.open(student, false) {
                            self.emitted[i].cleared_at = Some(ts);
                            out.cleared.push(self.emitted[i].clone());
                        }
                    }
                    TelemetryKind::AnswerSubmitted { correct: false } => {
                        // incorrect answers after the most recent correct one,
                        // no older than the window
                        let events: Vec<&Seen> = self.events_of(student).collect();
                        let start = events
                            .iter()
                            .rposition(|e| e.kind == TelemetryKind::AnswerSubmitted { correct: true })
                            .map(|i| i + 1)
                            .unwrap_or(0);
                        let window = self.config.incorrect_window_secs * 1000;
                        let count = events[start..]
                            .iter()
                            .filter(|e| e.kind == TelemetryKind::AnswerSubmitted { correct: false })
                            .filter(|e| ts - e.ts <= window)
                            .count() as u32;
                        if count >= self.config.incorrect_threshold && self.open(student, false).is_none() {
                            let alert = Alert {
                                student: student.clone(),
                                kind: AlertKind::RepeatedIncorrect {
                                    count,
                                    window_secs: self.config.incorrect_window_secs,
                                },
                                raised_at: ts,
                                cleared_at: None,
                            };
                            self.emitted.push(alert.clone());
                            out.raised.push(alert);
                        }
                    }
                    _ => {}
                }
            }
            Step::Tick { now } => {
                let mut students: Vec<PeerId> = self.registered.iter().map(|(p, _)| p.clone()).collect();
                students.sort();
                students.dedup();
                for s in students {
                    let reg = self.registration(&s).unwrap_or(0);
                    let last_activity = self
                        .events_of(&s)
                        .filter(|e| e.kind.is_activity())
                        .map(|e| e.ts)
                        .max()
                        .unwrap_or(reg);
                    if *now < last_activity || self.open(&s, true).is_some() {
                        continue;
                    }
                    let idle = now - last_activity;
                    if idle >= self.config.inactivity_secs * 1000 {
                        let alert = Alert {
                            student: s.clone(),
                            kind: AlertKind::Inactivity { duration_secs: idle / 1000 },
                            raised_at: *now,
                            cleared_at: None,
                        };
                        self.emitted.push(alert.clone());
                        out.raised.push(alert);
                    }
                }
            }
        }
        out
    }
}

/// Random step sequences: up to `max_events` ingests and ticks over up to
/// `max_students` students, with time mostly moving forward in seconds-scale
/// jumps and occasionally stepping back.
pub fn steps(max_events: usize, max_students: usize) -> impl proptest::strategy::Strategy<Value = Vec<Step>> {
    use proptest::prelude::*;

    let step = (0..max_students, 0u8..10, -20_000i64..90_000, crate::gen::telemetry_kind());
    (1..=max_students, proptest::collection::vec(step, 0..=max_events)).prop_map(|(n, raw)| {
        let mut out: Vec<Step> = (0..n)
            .map(|i| Step::Register {
                student: PeerId::new(format!("s{i}")),
                at: 0,
            })
            .collect();
        let mut now: u64 = 0;
        for (who, what, dt, kind) in raw {
            let student = PeerId::new(format!("s{}", who % n));
            let ts = now.saturating_add_signed(dt);
            now = now.max(ts);
            if what < 3 {
                out.push(Step::Tick { now });
            } else {
                out.push(Step::Ingest { student, kind, ts });
            }
        }
        out
    })
}
