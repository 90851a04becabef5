//! Many synthetic students in one session, each running the handshake and
//! then reporting telemetry, while a probe keeps polling `/healthz`.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use tutorlink_core::alerts::TelemetryKind;
use tutorlink_core::protocol::{Payload, TelemetryBody};

use crate::client::{wall_ms, Api, Client, ClientOptions};
use crate::stats::Percentiles;
use crate::HarnessError;

#[derive(Clone, Debug)]
pub struct LoadConfig {
    pub students: usize,
    /// Steady phase after the handshakes.
    pub duration: Duration,
    /// Gap between telemetry reports per student.
    pub telemetry_every: Duration,
    /// Gap between round-trip probes per student.
    pub ping_every: Duration,
    /// How long to wait for every pairing to connect.
    pub connect_timeout: Duration,
    pub seed: u64,
}

impl LoadConfig {
    pub fn new(students: usize, duration: Duration) -> LoadConfig {
        LoadConfig {
            students,
            duration,
            telemetry_every: Duration::from_millis(500),
            ping_every: Duration::from_millis(250),
            connect_timeout: Duration::from_secs(30),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LoadReport {
    pub students: usize,
    /// Students whose pairing reached Connected (an answer came back).
    pub connected: usize,
    /// From the start of the run until the last pairing connected.
    pub all_connected_ms: Option<f64>,
    pub join_to_connected: Percentiles,
    pub rtt: Percentiles,
    pub healthz: Percentiles,
    /// Sequence gaps, undecodable frames and error frames seen by clients.
    pub client_violations: Vec<String>,
    /// Protocol violations the gateway logged.
    pub logged_violations: usize,
    /// Students with a logged transition into Connected.
    pub connected_in_log: usize,
    pub telemetry_sent: usize,
}

impl LoadReport {
    pub fn all_connected_within(&self, limit: Duration) -> bool {
        self.connected == self.students
            && self
                .all_connected_ms
                .is_some_and(|ms| ms <= limit.as_secs_f64() * 1000.0)
    }

    pub fn violation_free(&self) -> bool {
        self.client_violations.is_empty() && self.logged_violations == 0
    }
}

/// Runs one load session against the gateway behind `api`.
pub async fn load_run(api: &Api, config: &LoadConfig) -> Result<LoadReport, HarnessError> {
    let started = Instant::now();
    let (session, tutor_token) = api.create_session("Load Tutor").await?;
    let tutor = Client::connect(
        api,
        &session,
        &tutor_token,
        "tutor",
        ClientOptions {
            auto_answer: true,
            ..ClientOptions::default()
        },
    )
    .await?;

    let probing = Arc::new(AtomicBool::new(true));
    // the probe gets its own thread and runtime so that a busy harness does
    // not show up as gateway latency
    let probe = {
        let api = api.clone();
        let probing = probing.clone();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("probe runtime");
            rt.block_on(async move {
                let mut samples = Vec::new();
                while probing.load(Ordering::Relaxed) {
                    if let Ok(d) = api.healthz().await {
                        samples.push(d);
                    }
                    tokio::time::sleep(Duration::from_millis(20)).await;
                }
                samples
            })
        })
    };

    let joins = (0..config.students).map(|i| {
        let api = api.clone();
        let session = session.clone();
        async move {
            let began = Instant::now();
            let alias = format!("Student {}", i + 1);
            let joined = api.join_student(&session, &alias).await?;
            let opts = ClientOptions {
                auto_offer: true,
                ..ClientOptions::default()
            };
            let client = Client::connect(&api, &session, &joined.token, &alias, opts).await?;
            Ok::<_, HarnessError>((client, began))
        }
    });
    let mut students = Vec::with_capacity(config.students);
    let mut first_error = None;
    for r in join_all(joins).await {
        match r {
            Ok(s) => students.push(s),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        probing.store(false, Ordering::Relaxed);
        for (c, _) in students {
            c.shutdown().await;
        }
        tutor.shutdown().await;
        return Err(e);
    }

    join_all(students.iter().map(|(c, _)| c.wait_connected(config.connect_timeout))).await;
    let mut join_to_connected = Vec::new();
    let mut last_connected = None::<Instant>;
    for (c, began) in &students {
        if let Some(at) = c.connected_at() {
            join_to_connected.push(at - *began);
            last_connected = last_connected.max(Some(at));
        }
    }
    let connected = join_to_connected.len();
    let all_connected_ms = (connected == config.students)
        .then(|| last_connected.map_or(0.0, |t| (t - started).as_secs_f64() * 1000.0));

    // steady phase
    let steady_until = tokio::time::Instant::now() + config.duration;
    let workers = students.iter().enumerate().map(|(i, (c, _))| {
        let mut rng = StdRng::seed_from_u64(config.seed.wrapping_add(i as u64));
        let telemetry_every = config.telemetry_every;
        let ping_every = config.ping_every;
        async move {
            let mut sent = 0;
            let mut next_telemetry = tokio::time::Instant::now() + telemetry_every.mul_f64(rng.gen_range(0.0..1.0));
            let mut next_ping = tokio::time::Instant::now() + ping_every.mul_f64(rng.gen_range(0.0..1.0));
            loop {
                let wake = next_telemetry.min(next_ping);
                if wake >= steady_until {
                    break;
                }
                tokio::time::sleep_until(wake).await;
                if wake == next_ping {
                    c.ping();
                    next_ping += ping_every;
                } else {
                    let kind = match rng.gen_range(0..10) {
                        0..=5 => TelemetryKind::MouseClick,
                        6..=8 => TelemetryKind::KeyInput,
                        _ => TelemetryKind::AnswerSubmitted { correct: rng.gen_bool(0.5) },
                    };
                    c.send(Payload::Telemetry(TelemetryBody {
                        activity: kind,
                        ts: wall_ms(),
                    }));
                    sent += 1;
                    next_telemetry += telemetry_every;
                }
            }
            sent
        }
    });
    let telemetry_sent: usize = join_all(workers).await.into_iter().sum();
    // outstanding pings come back before the books close
    join_all(students.iter().map(|(c, _)| c.sync())).await;
    tutor.sync().await;

    probing.store(false, Ordering::Relaxed);
    let healthz = tokio::task::spawn_blocking(move || probe.join().unwrap_or_default())
        .await
        .unwrap_or_default();

    let rtt: Vec<Duration> = students.iter().flat_map(|(c, _)| c.rtts()).collect();
    let mut client_violations: Vec<String> = Vec::new();
    for c in students.iter().map(|(c, _)| c).chain(std::iter::once(&tutor)) {
        client_violations.extend(c.violations().into_iter().map(|v| format!("{}: {v}", c.alias())));
        client_violations.extend(
            c.errors()
                .into_iter()
                .map(|e| format!("{}: error {}: {}", c.alias(), e.code, e.reason)),
        );
    }

    let lifecycle = api.events(&session, &tutor_token, "category=lifecycle").await?;
    let logged_violations = lifecycle
        .iter()
        .filter(|r| r["body"]["event"] == "protocol_violation")
        .count();
    let signal = api.events(&session, &tutor_token, "category=signal").await?;
    let connected_in_log = signal
        .iter()
        .filter(|r| r["body"]["to"] == "connected")
        .filter_map(|r| r["body"]["student"].as_str())
        .collect::<BTreeSet<_>>()
        .len();

    let _ = api.close_session(&session, &tutor_token).await;
    for (c, _) in students {
        c.shutdown().await;
    }
    tutor.shutdown().await;

    Ok(LoadReport {
        students: config.students,
        connected,
        all_connected_ms,
        join_to_connected: Percentiles::of(&join_to_connected),
        rtt: Percentiles::of(&rtt),
        healthz: Percentiles::of(&healthz),
        client_violations,
        logged_violations,
        connected_in_log,
        telemetry_sent,
    })
}
