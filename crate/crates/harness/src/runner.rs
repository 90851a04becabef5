//! Executes a scenario against a gateway and checks its expectations.
//!
//! Every frame any synthetic client receives goes to one collector, tagged
//! with the step that was running. After each step the runner waits until
//! traffic has settled: every client bounces a heartbeat off the gateway,
//! and that repeats until two rounds in a row saw no other frame move.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;
use tokio::sync::mpsc;

use tutorlink_core::alerts::{AlertKind, TelemetryKind};
use tutorlink_core::avatar::AvatarCommand;
use tutorlink_core::protocol::{
    AvatarBody, CandidateBody, ChatBody, ChatTarget, DispatchRequest, Payload, PeerId, QualityRequest, SdpBody,
    SessionId, TelemetryBody,
};

use crate::client::{Api, Client, ClientOptions, Observed};
use crate::scenario::{Action, Activity, AlertName, ClockMode, Expect, Scenario, EVERYONE, TUTOR};
use crate::HarnessError;

/// Longest single clock jump; every client heartbeats in between, so nobody
/// goes stale while simulated minutes pass.
const MAX_ADVANCE_MS: u64 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct ScenarioReport {
    pub name: String,
    pub assertions: Vec<AssertionResult>,
    /// One line per received frame except heartbeats, timestamps removed,
    /// sorted within each step. Equal across runs of a simulated-clock scenario.
    pub signature: Vec<String>,
    pub violations: Vec<String>,
    pub wall: Duration,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssertionResult> {
        self.assertions.iter().filter(|a| !a.passed)
    }
}

struct Run<'a> {
    api: &'a Api,
    scenario: &'a Scenario,
    session: SessionId,
    tutor_token: String,
    tutor: Client,
    students: BTreeMap<String, Client>,
    departed: Vec<Client>,
    peers: BTreeMap<String, PeerId>,
    step: Arc<AtomicUsize>,
    activity: Arc<AtomicU64>,
    collector: mpsc::UnboundedSender<Observed>,
    started: Instant,
    elapsed_ms: u64,
    clock_base_ms: u64,
}

fn options(run_step: &Arc<AtomicUsize>, activity: &Arc<AtomicU64>, tx: &mpsc::UnboundedSender<Observed>, auto: bool) -> ClientOptions {
    ClientOptions {
        auto_offer: auto,
        auto_answer: auto,
        collector: Some(tx.clone()),
        step: Some(run_step.clone()),
        activity: Some(activity.clone()),
    }
}

impl Run<'_> {
    fn all_clients(&self) -> impl Iterator<Item = &Client> {
        self.students.values().chain(self.departed.iter()).chain(std::iter::once(&self.tutor))
    }

    async fn settle(&self) {
        let mut quiet = 0;
        for _ in 0..100 {
            let before = self.activity.load(Ordering::SeqCst);
            for c in self.students.values() {
                c.sync().await;
            }
            self.tutor.sync().await;
            if self.activity.load(Ordering::SeqCst) == before {
                quiet += 1;
                if quiet == 2 {
                    return;
                }
            } else {
                quiet = 0;
            }
        }
    }

    async fn advance_to(&mut self, target_ms: u64) -> Result<(), HarnessError> {
        match self.scenario.clock {
            ClockMode::Simulated => {
                while self.elapsed_ms < target_ms {
                    let chunk = (target_ms - self.elapsed_ms).min(MAX_ADVANCE_MS);
                    self.api.advance_clock(chunk).await?;
                    self.elapsed_ms += chunk;
                    self.settle().await;
                }
            }
            ClockMode::Real => {
                let due = self.started + Duration::from_millis(target_ms);
                tokio::time::sleep_until(due.into()).await;
                self.elapsed_ms = self.elapsed_ms.max(target_ms);
            }
        }
        Ok(())
    }

    fn student(&self, index: usize, alias: &str) -> Result<&Client, HarnessError> {
        self.students
            .get(alias)
            .ok_or_else(|| HarnessError::refused(format!("step {index}"), format!("{alias} is not in the session")))
    }

    fn peer_of(&self, index: usize, name: &str) -> Result<PeerId, HarnessError> {
        if name == TUTOR {
            return Ok(self.tutor.peer().clone());
        }
        Ok(self.student(index, name)?.peer().clone())
    }

    fn selected(&self, who: &Option<String>) -> Vec<String> {
        match who {
            Some(s) => vec![s.clone()],
            None => self.scenario.students.clone(),
        }
    }

    async fn execute(&mut self, index: usize, action: &Action) -> Result<(), HarnessError> {
        let auto = self.scenario.auto_signal;
        match action {
            Action::Join { student } => {
                for alias in self.selected(student) {
                    if self.students.contains_key(&alias) {
                        continue;
                    }
                    let joined = self.api.join_student(&self.session, &alias).await?;
                    let opts = options(&self.step, &self.activity, &self.collector, auto);
                    let client = Client::connect(self.api, &self.session, &joined.token, &alias, opts).await?;
                    self.peers.insert(alias.clone(), joined.peer);
                    self.students.insert(alias, client);
                    // joins stay in order so peer ids are reproducible
                    self.settle().await;
                }
            }
            Action::Leave { student } => {
                for alias in self.selected(student) {
                    if let Some(c) = self.students.remove(&alias) {
                        c.leave("scenario");
                        c.sync().await;
                        self.departed.push(c);
                    }
                }
            }
            Action::Offer { student } => {
                let tutor = self.tutor.peer().clone();
                self.student(index, student)?.send(Payload::Offer(SdpBody {
                    to: tutor,
                    sdp: format!("v=0 scripted offer from {student}"),
                }));
            }
            Action::Answer { student } => {
                let to = self.peer_of(index, student)?;
                self.tutor.send(Payload::Answer(SdpBody {
                    to,
                    sdp: "v=0 scripted answer".into(),
                }));
            }
            Action::Candidate { student, from_tutor } => {
                let candidate = "candidate:scripted 1 udp 1 127.0.0.1 9 typ host".to_owned();
                if *from_tutor {
                    let to = self.peer_of(index, student)?;
                    self.tutor.send(Payload::IceCandidate(CandidateBody { to, candidate }));
                } else {
                    let to = self.tutor.peer().clone();
                    self.student(index, student)?
                        .send(Payload::IceCandidate(CandidateBody { to, candidate }));
                }
            }
            Action::Telemetry { student, activity } => {
                let kind = match activity {
                    Activity::Click => TelemetryKind::MouseClick,
                    Activity::Key => TelemetryKind::KeyInput,
                    Activity::Correct => TelemetryKind::AnswerSubmitted { correct: true },
                    Activity::Incorrect => TelemetryKind::AnswerSubmitted { correct: false },
                    Activity::Heartbeat => TelemetryKind::Heartbeat,
                };
                let ts = self.clock_base_ms + self.elapsed_ms;
                self.student(index, student)?
                    .send(Payload::Telemetry(TelemetryBody { activity: kind, ts }));
            }
            Action::Chat { from, to, text } => {
                let target = if to == EVERYONE {
                    ChatTarget::Broadcast
                } else {
                    ChatTarget::Peer(self.peer_of(index, to)?)
                };
                let sender = if from == TUTOR { &self.tutor } else { self.student(index, from)? };
                sender.send(Payload::Chat(ChatBody {
                    from: sender.peer().clone(),
                    to: target,
                    text: text.clone(),
                }));
            }
            Action::Zoom { student } => {
                let target = match student {
                    Some(s) => Some(self.peer_of(index, s)?),
                    None => None,
                };
                self.tutor.send(Payload::QualityRequest(QualityRequest::Zoom { target }));
            }
            Action::Dispatch {
                student,
                text,
                show_bubble,
            } => {
                let target = self.peer_of(index, student)?;
                self.tutor.send(Payload::AvatarCommand(AvatarBody::Dispatch(DispatchRequest {
                    target,
                    text: text.clone(),
                    show_bubble: *show_bubble,
                })));
            }
            Action::Wait => {}
        }
        self.settle().await;
        Ok(())
    }
}

/// Runs `scenario` against the gateway behind `api`.
pub async fn run_scenario(api: &Api, scenario: &Scenario) -> Result<ScenarioReport, HarnessError> {
    let started = Instant::now();
    let clock_base_ms = match scenario.clock {
        ClockMode::Simulated => api.advance_clock(0).await?,
        ClockMode::Real => 0,
    };
    let (session, tutor_token) = api.create_session(&scenario.tutor_alias).await?;
    let step = Arc::new(AtomicUsize::new(0));
    let activity = Arc::new(AtomicU64::new(0));
    let (tx, mut rx) = mpsc::unbounded_channel();
    let tutor = Client::connect(
        api,
        &session,
        &tutor_token,
        TUTOR,
        options(&step, &activity, &tx, scenario.auto_signal),
    )
    .await?;

    let mut run = Run {
        api,
        scenario,
        session,
        tutor_token,
        tutor,
        students: BTreeMap::new(),
        departed: Vec::new(),
        peers: BTreeMap::new(),
        step,
        activity,
        collector: tx,
        started,
        elapsed_ms: 0,
        clock_base_ms,
    };
    run.settle().await;

    for (i, s) in scenario.steps.iter().enumerate() {
        let target = (s.at * 1000.0).round() as u64;
        run.advance_to(target).await?;
        run.step.store(i + 1, Ordering::SeqCst);
        run.execute(i, &s.action).await?;
    }
    run.settle().await;
    let teardown = scenario.steps.len() + 1;
    run.step.store(teardown, Ordering::SeqCst);

    let mut violations: Vec<String> = run
        .all_clients()
        .flat_map(|c| c.violations().into_iter().map(move |v| format!("{}: {v}", c.alias())))
        .collect();
    let logged = api.events(&run.session, &run.tutor_token, "category=lifecycle").await?;
    violations.extend(
        logged
            .iter()
            .filter(|r| r["body"]["event"] == "protocol_violation")
            .map(|r| format!("logged: {} {}", r["body"]["peer"], r["body"]["reason"])),
    );

    let _ = api.close_session(&run.session, &run.tutor_token).await;
    let Run {
        tutor,
        students,
        departed,
        peers,
        collector,
        ..
    } = run;
    for c in students.into_values().chain(departed).chain(std::iter::once(tutor)) {
        c.shutdown().await;
    }
    drop(collector);
    let mut observed = Vec::new();
    while let Ok(o) = rx.try_recv() {
        if o.step < teardown {
            observed.push(o);
        }
    }
    for o in &observed {
        if let Payload::Error(e) = &o.envelope.payload {
            violations.push(format!("{} got error {}: {}", o.receiver, e.code, e.reason));
        }
    }

    let ctx = Context {
        scenario,
        peers: &peers,
        observed: &observed,
        violations: &violations,
        clock_base_ms,
    };
    let assertions = scenario.expects.iter().map(|e| ctx.check(e)).collect();
    Ok(ScenarioReport {
        name: scenario.name.clone(),
        assertions,
        signature: signature(&observed),
        violations,
        wall: started.elapsed(),
    })
}

fn strip_times(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["ts", "raised_at", "cleared_at"] {
                map.remove(key);
            }
            map.values_mut().for_each(strip_times);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_times),
        _ => {}
    }
}

fn signature(observed: &[Observed]) -> Vec<String> {
    let mut lines: Vec<String> = observed
        .iter()
        // echoes depend on how many settle rounds a step needed
        .filter(|o| !matches!(o.envelope.payload, Payload::Heartbeat(_)))
        .map(|o| {
            let mut payload = serde_json::to_value(&o.envelope.payload).unwrap_or(Value::Null);
            strip_times(&mut payload);
            format!(
                "{:05} {} <- {} {} {}",
                o.step,
                o.receiver,
                o.envelope.sender,
                o.envelope.kind(),
                payload
            )
        })
        .collect();
    lines.sort();
    lines
}

struct Context<'a> {
    scenario: &'a Scenario,
    peers: &'a BTreeMap<String, PeerId>,
    observed: &'a [Observed],
    violations: &'a [String],
    clock_base_ms: u64,
}

fn class_matches(kind: &AlertKind, name: AlertName) -> bool {
    matches!(
        (kind, name),
        (AlertKind::Inactivity { .. }, AlertName::Inactivity)
            | (AlertKind::RepeatedIncorrect { .. }, AlertName::RepeatedIncorrect)
    )
}

fn verdict(name: String, passed: bool, detail: String) -> AssertionResult {
    AssertionResult { name, passed, detail }
}

impl Context<'_> {
    fn peer(&self, alias: &str) -> Option<&PeerId> {
        self.peers.get(alias)
    }

    fn received_by<'b>(&'b self, alias: &'b str) -> impl Iterator<Item = &'b Observed> + 'b {
        self.observed.iter().filter(move |o| o.receiver == alias)
    }

    fn alerts(&self) -> impl Iterator<Item = &tutorlink_core::protocol::AlertBody> {
        self.received_by(TUTOR).filter_map(|o| match &o.envelope.payload {
            Payload::Alert(a) => Some(a),
            _ => None,
        })
    }

    fn avatar_commands(&self) -> impl Iterator<Item = (&str, &AvatarCommand)> {
        self.observed.iter().filter_map(|o| match &o.envelope.payload {
            Payload::AvatarCommand(AvatarBody::Play(c)) => Some((o.receiver.as_str(), c)),
            _ => None,
        })
    }

    fn name_of(&self, peer: &PeerId) -> String {
        if peer.as_str() == TUTOR {
            return TUTOR.to_owned();
        }
        self.peers
            .iter()
            .find(|(_, p)| *p == peer)
            .map_or_else(|| peer.to_string(), |(a, _)| a.clone())
    }

    fn check(&self, e: &Expect) -> AssertionResult {
        match e {
            Expect::Alert {
                student,
                alert,
                count,
                duration_secs,
                text,
                raised_at_secs,
                times,
            } => {
                let name = format!("{student} raises {alert:?} x{times}");
                let Some(peer) = self.peer(student) else {
                    return verdict(name, false, format!("{student} never joined"));
                };
                let raised: Vec<_> = self
                    .alerts()
                    .filter(|a| a.alert.cleared_at.is_none() && a.alert.student == *peer)
                    .filter(|a| class_matches(&a.alert.kind, *alert))
                    .collect();
                let mut problems = Vec::new();
                if raised.len() != *times {
                    problems.push(format!("{} raised", raised.len()));
                }
                for a in &raised {
                    match (&a.alert.kind, count, duration_secs) {
                        (AlertKind::RepeatedIncorrect { count: got, .. }, Some(want), _) if got != want => {
                            problems.push(format!("count {got}, expected {want}"))
                        }
                        (AlertKind::Inactivity { duration_secs: got }, _, Some(want)) if got != want => {
                            problems.push(format!("duration {got}s, expected {want}s"))
                        }
                        _ => {}
                    }
                    if let Some(t) = text.as_ref().filter(|t| **t != a.text) {
                        problems.push(format!("text {:?}, expected {t:?}", a.text));
                    }
                    if let (Some(secs), ClockMode::Simulated) = (raised_at_secs, self.scenario.clock) {
                        let want = self.clock_base_ms + (secs * 1000.0).round() as u64;
                        if a.alert.raised_at != want {
                            problems.push(format!(
                                "raised at {}s, expected {secs}s",
                                (a.alert.raised_at - self.clock_base_ms) as f64 / 1000.0
                            ));
                        }
                    }
                }
                verdict(name, problems.is_empty(), problems.join("; "))
            }
            Expect::NoAlert { student } => {
                let name = format!("no alert for {}", student.as_deref().unwrap_or("anyone"));
                let peer = student.as_deref().and_then(|s| self.peer(s));
                let raised: Vec<String> = self
                    .alerts()
                    .filter(|a| a.alert.cleared_at.is_none())
                    .filter(|a| peer.is_none_or(|p| a.alert.student == *p))
                    .map(|a| a.text.clone())
                    .collect();
                verdict(name, raised.is_empty(), raised.join("; "))
            }
            Expect::AlertCleared { student, alert } => {
                let name = format!("{student} {alert:?} cleared");
                let peer = self.peer(student);
                let ok = self.alerts().any(|a| {
                    a.alert.cleared_at.is_some()
                        && Some(&a.alert.student) == peer
                        && class_matches(&a.alert.kind, *alert)
                });
                verdict(name, ok, String::new())
            }
            Expect::Avatar {
                student,
                attention_wave,
                gesture,
                text,
                show_bubble,
                times,
            } => {
                let name = format!("{student} receives avatar command x{times}");
                let peer = self.peer(student);
                let mine: Vec<&AvatarCommand> = self
                    .avatar_commands()
                    .filter(|(r, _)| r == student)
                    .map(|(_, c)| c)
                    .collect();
                let mut problems = Vec::new();
                if mine.len() != *times {
                    problems.push(format!("{} received", mine.len()));
                }
                for c in &mine {
                    if Some(&c.target) != peer {
                        problems.push(format!("addressed to {}", c.target));
                    }
                    if let Some(w) = attention_wave.filter(|w| *w != c.attention_wave) {
                        problems.push(format!("attention_wave {}, expected {w}", c.attention_wave));
                    }
                    if let Some(b) = show_bubble.filter(|b| *b != c.show_bubble) {
                        problems.push(format!("show_bubble {}, expected {b}", c.show_bubble));
                    }
                    let got_gesture = serde_json::to_value(c.gesture).unwrap_or(Value::Null);
                    if let Some(g) = gesture.as_ref().filter(|g| got_gesture != g.as_str()) {
                        problems.push(format!("gesture {got_gesture}, expected {g:?}"));
                    }
                    if let Some(t) = text.as_ref().filter(|t| **t != c.speech_text) {
                        problems.push(format!("text {:?}, expected {t:?}", c.speech_text));
                    }
                }
                let stray: Vec<&str> = self
                    .avatar_commands()
                    .filter(|(r, c)| r != student && text.as_ref().is_none_or(|t| *t == c.speech_text))
                    .map(|(r, _)| r)
                    .collect();
                if !stray.is_empty() {
                    problems.push(format!("also delivered to {}", stray.join(", ")));
                }
                verdict(name, problems.is_empty(), problems.join("; "))
            }
            Expect::NoAvatar { student } => {
                let name = format!("no avatar command for {}", student.as_deref().unwrap_or("anyone"));
                let got: Vec<&str> = self
                    .avatar_commands()
                    .filter(|(r, _)| student.as_deref().is_none_or(|s| s == *r))
                    .map(|(r, _)| r)
                    .collect();
                verdict(name, got.is_empty(), got.join(", "))
            }
            Expect::Chat { to, from, text } => {
                let name = format!("{to} receives chat");
                let ok = self.received_by(to).any(|o| match &o.envelope.payload {
                    Payload::Chat(c) => {
                        from.as_ref().is_none_or(|f| self.name_of(&c.from) == *f)
                            && text.as_ref().is_none_or(|t| *t == c.text)
                    }
                    _ => false,
                });
                verdict(name, ok, String::new())
            }
            Expect::Connected { student } => {
                let names: Vec<String> = match student {
                    Some(s) => vec![s.clone()],
                    None => self.scenario.students.clone(),
                };
                let missing: Vec<String> = names
                    .iter()
                    .filter(|s| {
                        !self
                            .received_by(s)
                            .any(|o| matches!(o.envelope.payload, Payload::Answer(_)))
                    })
                    .cloned()
                    .collect();
                verdict(
                    format!("connected: {}", student.as_deref().unwrap_or("every student")),
                    missing.is_empty(),
                    missing.join(", "),
                )
            }
            Expect::NoViolations => verdict(
                "no protocol violations".into(),
                self.violations.is_empty(),
                self.violations.join("; "),
            ),
        }
    }
}
