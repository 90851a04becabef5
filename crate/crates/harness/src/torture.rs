//! Crash test for the event log: a child process appends records and
//! reports each acknowledged sequence number on stdout, the parent kills it
//! with SIGKILL at a random point and checks that every acknowledged record
//! survived.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use tutorlink_core::eventlog::{Category, EventLog, FileStore, LogStore, Subject};
use tutorlink_core::protocol::SessionId;

const SESSION: &str = "torture";

/// Child side: append forever, printing each acknowledged sequence number.
pub fn append_forever(dir: &Path) -> Result<(), String> {
    let store = FileStore::open(dir).map_err(|e| e.to_string())?;
    let log = EventLog::new(std::sync::Arc::new(store));
    let session = SessionId::new(SESSION);
    if !log.recover().map_err(|e| e.to_string())?.contains(&session) {
        log.create_session(&session).map_err(|e| e.to_string())?;
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for n in 0u64.. {
        let seq = log
            .append(&session, n, Category::Telemetry, Subject::Session, &json!({ "n": n, "pad": "x".repeat(200) }))
            .map_err(|e| e.to_string())?;
        writeln!(out, "{seq}").and_then(|_| out.flush()).map_err(|e| e.to_string())?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct DurabilityReport {
    pub rounds: usize,
    pub acknowledged: usize,
    pub recovered: usize,
    pub lost: Vec<u64>,
}

/// Runs `rounds` append-kill-reopen-verify cycles. `exe` is the harness
/// binary; its hidden `log-torture` command is the child.
pub fn kill_restart(exe: &Path, dir: &Path, rounds: usize, seed: u64) -> Result<DurabilityReport, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = DurabilityReport::default();
    // records can be durable without having been acknowledged, so each
    // round continues after the last record the reload found
    let mut next_seq = 1u64;
    for round in 0..rounds {
        let mut child = Command::new(exe)
            .arg("log-torture")
            .arg("--dir")
            .arg(dir)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("spawn: {e}"))?;
        let mut lines = BufReader::new(child.stdout.take().expect("piped stdout")).lines();
        let kill_after = rng.gen_range(1..=60);
        let mut acked = Vec::new();
        while acked.len() < kill_after {
            match lines.next() {
                Some(Ok(l)) => acked.push(l.trim().parse::<u64>().map_err(|e| format!("child said {l:?}: {e}"))?),
                _ => return Err(format!("round {round}: child exited early")),
            }
        }
        // land the kill anywhere, including mid-write
        if rng.gen_bool(0.5) {
            std::thread::sleep(Duration::from_micros(rng.gen_range(0..500)));
        }
        child.kill().map_err(|e| format!("kill: {e}"))?;
        // whatever it printed before dying was acknowledged too
        for l in lines.map_while(Result::ok) {
            if let Ok(seq) = l.trim().parse::<u64>() {
                acked.push(seq);
            }
        }
        let _ = child.wait();

        let store = FileStore::open(dir).map_err(|e| e.to_string())?;
        let records = store
            .load(&SessionId::new(SESSION))
            .map_err(|e| format!("round {round}: reload failed: {e}"))?;
        for (i, r) in records.iter().enumerate() {
            if r.global_seq != i as u64 + 1 {
                return Err(format!("round {round}: record {i} has seq {}", r.global_seq));
            }
        }
        let last = records.last().map_or(0, |r| r.global_seq);
        if acked.windows(2).any(|w| w[1] != w[0] + 1) || acked.first().is_some_and(|&f| f != next_seq) {
            return Err(format!("round {round}: acknowledgements out of order"));
        }
        report.lost.extend(acked.iter().copied().filter(|&s| s > last));
        next_seq = last + 1;
        report.acknowledged += acked.len();
        report.recovered = records.len();
        report.rounds += 1;
    }
    Ok(report)
}
