//! Scenario files.
//!
//! ```toml
//! name = "algebra_hint"
//! clock = "simulated"          # or "real"
//! tutor = "Ms. Rivera"
//!
//! [students]
//! count = 2
//! aliases = ["Ana", "Ben"]     # optional; defaults to "Student 1", ...
//!
//! [[step]]
//! at = 0                       # seconds from the start, non-decreasing
//! do = "join"                  # every student when `student` is omitted
//!
//! [[step]]
//! at = 5
//! do = "telemetry"
//! student = "Ana"
//! activity = "incorrect"       # click | key | correct | incorrect | heartbeat
//!
//! [[expect]]
//! kind = "alert"
//! student = "Ana"
//! alert = "repeated_incorrect"
//! count = 3
//! ```
//!
//! Steps: `join`, `leave`, `offer`, `answer`, `candidate`, `telemetry`,
//! `chat`, `zoom`, `dispatch` and `wait`. With `auto_signal` (the default)
//! the synthetic clients run the offer/answer exchange on their own and the
//! explicit signaling steps send extra frames.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

pub const TUTOR: &str = "tutor";
pub const EVERYONE: &str = "*";

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioParseError {
    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("{0}")]
    Syntax(String),
    #[error("step {index} at {at}s comes before the previous step at {previous}s")]
    OutOfOrder { index: usize, at: f64, previous: f64 },
    #[error("step {index} has an invalid time {at}")]
    BadTime { index: usize, at: f64 },
    #[error("{count} students but {aliases} aliases")]
    AliasCount { count: usize, aliases: usize },
    #[error("alias {0:?} is used twice")]
    DuplicateAlias(String),
    #[error("{place} names unknown participant {name:?}")]
    UnknownParticipant { place: String, name: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Simulated,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Click,
    Key,
    Correct,
    Incorrect,
    Heartbeat,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "do", rename_all = "snake_case")]
pub enum Action {
    Join {
        student: Option<String>,
    },
    Leave {
        student: Option<String>,
    },
    /// The student sends an offer to the tutor.
    Offer {
        student: String,
    },
    /// The tutor sends an answer to the student.
    Answer {
        student: String,
    },
    Candidate {
        student: String,
        /// Sent by the tutor to the student instead of the other way round.
        #[serde(default)]
        from_tutor: bool,
    },
    Telemetry {
        student: String,
        activity: Activity,
    },
    /// `from` and `to` are aliases, "tutor", or "*" (to every student).
    Chat {
        from: String,
        to: String,
        text: String,
    },
    /// Enlarges one student's feed; no student clears the zoom.
    Zoom {
        student: Option<String>,
    },
    Dispatch {
        student: String,
        text: String,
        #[serde(default = "yes")]
        show_bubble: bool,
    },
    Wait,
}

fn yes() -> bool {
    true
}

fn once() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Step {
    pub at: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertName {
    Inactivity,
    RepeatedIncorrect,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expect {
    /// The tutor receives exactly `times` matching raised alerts.
    Alert {
        student: String,
        alert: AlertName,
        count: Option<u32>,
        duration_secs: Option<u64>,
        text: Option<String>,
        /// Simulated clock only.
        raised_at_secs: Option<f64>,
        #[serde(default = "once")]
        times: usize,
    },
    /// No raised alert at all, or none for `student`.
    NoAlert {
        student: Option<String>,
    },
    AlertCleared {
        student: String,
        alert: AlertName,
    },
    /// `student` receives exactly `times` matching avatar commands and no
    /// other student receives one.
    Avatar {
        student: String,
        attention_wave: Option<bool>,
        gesture: Option<String>,
        text: Option<String>,
        show_bubble: Option<bool>,
        #[serde(default = "once")]
        times: usize,
    },
    NoAvatar {
        student: Option<String>,
    },
    /// `to` receives at least one matching chat line.
    Chat {
        to: String,
        from: Option<String>,
        text: Option<String>,
    },
    /// Each named student (or every student) saw an answer from the tutor.
    Connected {
        student: Option<String>,
    },
    /// No error frames, sequence gaps or logged protocol violations.
    NoViolations,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct Students {
    #[serde(default)]
    count: usize,
    #[serde(default)]
    aliases: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    clock: ClockMode,
    #[serde(default)]
    tutor: Option<String>,
    #[serde(default)]
    auto_signal: Option<bool>,
    #[serde(default)]
    students: Students,
    #[serde(default, rename = "step")]
    steps: Vec<Step>,
    #[serde(default, rename = "expect")]
    expects: Vec<Expect>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub clock: ClockMode,
    pub tutor_alias: String,
    pub auto_signal: bool,
    pub students: Vec<String>,
    pub steps: Vec<Step>,
    pub expects: Vec<Expect>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioParseError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioParseError::Read {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let fallback = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Scenario::parse(&text, fallback)
    }

    pub fn parse(text: &str, fallback_name: &str) -> Result<Scenario, ScenarioParseError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioParseError::Syntax(e.to_string()))?;

        let students = if raw.students.aliases.is_empty() {
            (1..=raw.students.count).map(|i| format!("Student {i}")).collect()
        } else if raw.students.aliases.len() != raw.students.count {
            return Err(ScenarioParseError::AliasCount {
                count: raw.students.count,
                aliases: raw.students.aliases.len(),
            });
        } else {
            raw.students.aliases
        };
        let mut seen = HashSet::new();
        for a in &students {
            if a == TUTOR || a == EVERYONE || !seen.insert(a.as_str()) {
                return Err(ScenarioParseError::DuplicateAlias(a.clone()));
            }
        }

        let mut previous = 0.0;
        for (index, step) in raw.steps.iter().enumerate() {
            if !(step.at.is_finite() && step.at >= 0.0) {
                return Err(ScenarioParseError::BadTime { index, at: step.at });
            }
            if step.at < previous {
                return Err(ScenarioParseError::OutOfOrder {
                    index,
                    at: step.at,
                    previous,
                });
            }
            previous = step.at;
        }

        let scenario = Scenario {
            name: raw.name.unwrap_or_else(|| fallback_name.to_owned()),
            clock: raw.clock,
            tutor_alias: raw.tutor.unwrap_or_else(|| "Tutor".to_owned()),
            auto_signal: raw.auto_signal.unwrap_or(true),
            students,
            steps: raw.steps,
            expects: raw.expects,
        };
        scenario.check_names()?;
        Ok(scenario)
    }

    fn check_names(&self) -> Result<(), ScenarioParseError> {
        let student = |place: String, name: &str| {
            if self.students.iter().any(|s| s == name) {
                Ok(())
            } else {
                Err(ScenarioParseError::UnknownParticipant {
                    place,
                    name: name.to_owned(),
                })
            }
        };
        let anyone = |place: String, name: &str, broadcast: bool| {
            if name == TUTOR || (broadcast && name == EVERYONE) {
                Ok(())
            } else {
                student(place, name)
            }
        };
        for (i, step) in self.steps.iter().enumerate() {
            let place = format!("step {i}");
            match &step.action {
                Action::Join { student: s } | Action::Leave { student: s } | Action::Zoom { student: s } => {
                    if let Some(s) = s {
                        student(place, s)?;
                    }
                }
                Action::Offer { student: s }
                | Action::Answer { student: s }
                | Action::Candidate { student: s, .. }
                | Action::Telemetry { student: s, .. }
                | Action::Dispatch { student: s, .. } => student(place, s)?,
                Action::Chat { from, to, .. } => {
                    anyone(place.clone(), from, false)?;
                    anyone(place, to, true)?;
                }
                Action::Wait => {}
            }
        }
        for (i, e) in self.expects.iter().enumerate() {
            let place = format!("expectation {i}");
            match e {
                Expect::Alert { student: s, .. }
                | Expect::AlertCleared { student: s, .. }
                | Expect::Avatar { student: s, .. } => student(place, s)?,
                Expect::NoAlert { student: s } | Expect::NoAvatar { student: s } | Expect::Connected { student: s } => {
                    if let Some(s) = s {
                        student(place, s)?;
                    }
                }
                Expect::Chat { to, from, .. } => {
                    anyone(place.clone(), to, false)?;
                    if let Some(f) = from {
                        anyone(place, f, false)?;
                    }
                }
                Expect::NoViolations => {}
            }
        }
        Ok(())
    }
}
