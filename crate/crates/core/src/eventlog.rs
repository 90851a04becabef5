//! Append-only, per-session event log.
//!
//! Records reach storage before their sequence number is handed back. The
//! default [`FileStore`] keeps one directory per session holding
//! `events.log`, one record per line:
//!
//! ```text
//! <global_seq> <ts> <category> <subject> <body>
//! ```
//!
//! `subject` is a peer id or `-` for session-level records and `body` is a
//! single-line JSON document in the wire payload encoding.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dashmap::DashMap;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::protocol::{ChatTarget, PeerId, Role, SessionId};

const LOG_FILE: &str = "events.log";
const SESSION_MARKER: &str = "-";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Chat,
    Telemetry,
    Alert,
    AvatarCommand,
    Signal,
    Lifecycle,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Chat,
        Category::Telemetry,
        Category::Alert,
        Category::AvatarCommand,
        Category::Signal,
        Category::Lifecycle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Chat => "chat",
            Category::Telemetry => "telemetry",
            Category::Alert => "alert",
            Category::AvatarCommand => "avatar_command",
            Category::Signal => "signal",
            Category::Lifecycle => "lifecycle",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Subject {
    Peer(PeerId),
    Session,
}

impl Subject {
    pub fn parse(s: &str) -> Subject {
        if s == SESSION_MARKER {
            Subject::Session
        } else {
            Subject::Peer(PeerId::new(s))
        }
    }

    pub fn peer(&self) -> Option<&PeerId> {
        match self {
            Subject::Peer(p) => Some(p),
            Subject::Session => None,
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Peer(p) => f.write_str(p.as_str()),
            Subject::Session => f.write_str(SESSION_MARKER),
        }
    }
}

impl Serialize for Subject {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// One acknowledged record. `body` holds the exact JSON text that was stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub global_seq: u64,
    pub ts: u64,
    pub category: Category,
    pub subject: Subject,
    pub body: String,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.global_seq, self.ts, self.category, self.subject, self.body
        )
    }

    pub fn parse_line(line: &str) -> Result<LogRecord, String> {
        let mut parts = line.splitn(5, ' ');
        let mut next = |what: &str| parts.next().ok_or_else(|| format!("missing {what}"));
        let global_seq = next("seq")?.parse::<u64>().map_err(|e| format!("bad seq: {e}"))?;
        let ts = next("ts")?.parse::<u64>().map_err(|e| format!("bad ts: {e}"))?;
        let cat = next("category")?;
        let category = Category::parse(cat).ok_or_else(|| format!("bad category {cat:?}"))?;
        let subject = Subject::parse(next("subject")?);
        let body = next("body")?.to_owned();
        serde_json::from_str::<Value>(&body).map_err(|e| format!("bad body: {e}"))?;
        Ok(LogRecord {
            global_seq,
            ts,
            category,
            subject,
            body,
        })
    }

    pub fn body_json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or(Value::Null)
    }

    pub fn body_as<T: for<'de> Deserialize<'de>>(&self) -> Option<T> {
        serde_json::from_str(&self.body).ok()
    }
}

/// Session-level facts written under [`Category::Lifecycle`]. Folding them
/// reproduces the roster history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LifecycleEvent {
    Created {
        tutor_alias: String,
        tutor_peer: PeerId,
        /// Hex SHA-256 of the tutor token, so a reloaded log stays readable by
        /// the tutor without storing the bearer credential.
        tutor_token_sha256: String,
    },
    Joined {
        peer: PeerId,
        alias: String,
        role: Role,
    },
    Left {
        peer: PeerId,
        reason: String,
    },
    ProtocolViolation {
        peer: PeerId,
        reason: String,
    },
    Closed,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("session {0} not found")]
    SessionNotFound(SessionId),
    #[error("peer {0} never joined this session")]
    UnknownPeer(PeerId),
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

impl From<std::io::Error> for LogError {
    fn from(e: std::io::Error) -> Self {
        LogError::StorageFailure(e.to_string())
    }
}

/// Durable backing for the log. `append` must not return until the records
/// would survive a process crash.
pub trait LogStore: Send + Sync {
    fn create(&self, session: &SessionId) -> Result<(), LogError>;
    fn append(&self, session: &SessionId, records: &[LogRecord]) -> Result<(), LogError>;
    fn load(&self, session: &SessionId) -> Result<Vec<LogRecord>, LogError>;
    fn sessions(&self) -> Result<Vec<SessionId>, LogError>;
}

/// Volatile store for tests and throwaway runs.
#[derive(Default)]
pub struct MemoryStore {
    sessions: Mutex<HashMap<SessionId, Vec<LogRecord>>>,
}

impl LogStore for MemoryStore {
    fn create(&self, session: &SessionId) -> Result<(), LogError> {
        self.sessions.lock().entry(session.clone()).or_default();
        Ok(())
    }

    fn append(&self, session: &SessionId, records: &[LogRecord]) -> Result<(), LogError> {
        let mut sessions = self.sessions.lock();
        let log = sessions
            .get_mut(session)
            .ok_or_else(|| LogError::SessionNotFound(session.clone()))?;
        log.extend_from_slice(records);
        Ok(())
    }

    fn load(&self, session: &SessionId) -> Result<Vec<LogRecord>, LogError> {
        self.sessions
            .lock()
            .get(session)
            .cloned()
            .ok_or_else(|| LogError::SessionNotFound(session.clone()))
    }

    fn sessions(&self) -> Result<Vec<SessionId>, LogError> {
        Ok(self.sessions.lock().keys().cloned().collect())
    }
}

/// Newline-delimited files, one directory per session, `fsync` per batch.
pub struct FileStore {
    root: PathBuf,
    files: Mutex<HashMap<SessionId, Arc<Mutex<File>>>>,
}

fn safe_component(session: &SessionId) -> Result<&str, LogError> {
    let s = session.as_str();
    let ok = !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(s)
    } else {
        Err(LogError::StorageFailure(format!("session id {s:?} is not a safe directory name")))
    }
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<FileStore, LogError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(FileStore {
            root,
            files: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self, session: &SessionId) -> Result<PathBuf, LogError> {
        Ok(self.root.join(safe_component(session)?).join(LOG_FILE))
    }

    fn handle(&self, session: &SessionId) -> Result<Arc<Mutex<File>>, LogError> {
        let mut files = self.files.lock();
        if let Some(f) = files.get(session) {
            return Ok(f.clone());
        }
        let path = self.log_path(session)?;
        if !path.exists() {
            return Err(LogError::SessionNotFound(session.clone()));
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        let file = Arc::new(Mutex::new(file));
        files.insert(session.clone(), file.clone());
        Ok(file)
    }
}

impl LogStore for FileStore {
    fn create(&self, session: &SessionId) -> Result<(), LogError> {
        let path = self.log_path(session)?;
        let dir = path.parent().expect("log path has a parent");
        fs::create_dir_all(dir)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        file.sync_all()?;
        // Make the new directory entry itself durable.
        File::open(dir)?.sync_all()?;
        File::open(&self.root)?.sync_all()?;
        Ok(())
    }

    fn append(&self, session: &SessionId, records: &[LogRecord]) -> Result<(), LogError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for r in records {
            buf.push_str(&r.to_line());
            buf.push('\n');
        }
        let handle = self.handle(session)?;
        let mut file = handle.lock();
        let before = file.metadata()?.len();
        let written = file.write_all(buf.as_bytes()).and_then(|_| file.sync_data());
        if let Err(e) = written {
            // Never leave a torn record in front of the next batch.
            let _ = file.set_len(before);
            return Err(e.into());
        }
        Ok(())
    }

    /// Reads every complete record. A trailing partial line left by a crash
    /// mid-write was never acknowledged and is cut off.
    fn load(&self, session: &SessionId) -> Result<Vec<LogRecord>, LogError> {
        let path = self.log_path(session)?;
        let mut file = match OpenOptions::new().read(true).write(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(LogError::SessionNotFound(session.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            file.set_len(complete as u64)?;
            file.sync_all()?;
        }
        let text = std::str::from_utf8(&bytes[..complete])
            .map_err(|e| LogError::StorageFailure(format!("{}: {e}", path.display())))?;
        text.lines()
            .enumerate()
            .map(|(i, line)| {
                LogRecord::parse_line(line)
                    .map_err(|e| LogError::StorageFailure(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect()
    }

    fn sessions(&self) -> Result<Vec<SessionId>, LogError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join(LOG_FILE).is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    out.push(SessionId::new(name));
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// A record waiting for its sequence number.
#[derive(Clone, Debug)]
pub struct PendingRecord {
    pub ts: u64,
    pub category: Category,
    pub subject: Subject,
    pub body: String,
}

impl PendingRecord {
    pub fn new(ts: u64, category: Category, subject: Subject, body: &impl Serialize) -> Self {
        PendingRecord {
            ts,
            category,
            subject,
            body: serde_json::to_string(body).expect("log bodies serialize to JSON"),
        }
    }
}

/// Inclusive ranges; `None` means unconstrained.
#[derive(Clone, Debug, Default)]
pub struct LogFilter {
    pub categories: Option<Vec<Category>>,
    pub subject: Option<Subject>,
    pub ts_range: Option<(u64, u64)>,
    pub seq_range: Option<(u64, u64)>,
}

impl LogFilter {
    pub fn matches(&self, r: &LogRecord) -> bool {
        self.categories.as_ref().is_none_or(|cs| cs.contains(&r.category))
            && self.subject.as_ref().is_none_or(|s| *s == r.subject)
            && self.ts_range.is_none_or(|(lo, hi)| lo <= r.ts && r.ts <= hi)
            && self.seq_range.is_none_or(|(lo, hi)| lo <= r.global_seq && r.global_seq <= hi)
    }
}

#[derive(Default)]
struct SessionLog {
    records: RwLock<Vec<LogRecord>>,
    // Serializes appenders; readers only take the records lock.
    append_lock: Mutex<()>,
}

/// Sequencing and querying in front of a [`LogStore`].
pub struct EventLog {
    store: Arc<dyn LogStore>,
    sessions: DashMap<SessionId, Arc<SessionLog>>,
}

impl EventLog {
    pub fn new(store: Arc<dyn LogStore>) -> Self {
        EventLog {
            store,
            sessions: DashMap::new(),
        }
    }

    pub fn store(&self) -> &Arc<dyn LogStore> {
        &self.store
    }

    pub fn create_session(&self, session: &SessionId) -> Result<(), LogError> {
        self.store.create(session)?;
        self.sessions.entry(session.clone()).or_default();
        Ok(())
    }

    /// Loads every session found in the store and returns their ids.
    pub fn recover(&self) -> Result<Vec<SessionId>, LogError> {
        let ids = self.store.sessions()?;
        for id in &ids {
            let records = self.store.load(id)?;
            let log = SessionLog {
                records: RwLock::new(records),
                append_lock: Mutex::new(()),
            };
            self.sessions.insert(id.clone(), Arc::new(log));
        }
        Ok(ids)
    }

    fn session(&self, session: &SessionId) -> Result<Arc<SessionLog>, LogError> {
        self.sessions
            .get(session)
            .map(|s| s.clone())
            .ok_or_else(|| LogError::SessionNotFound(session.clone()))
    }

    pub fn append(
        &self,
        session: &SessionId,
        ts: u64,
        category: Category,
        subject: Subject,
        body: &impl Serialize,
    ) -> Result<u64, LogError> {
        let seqs = self.append_batch(session, vec![PendingRecord::new(ts, category, subject, body)])?;
        Ok(seqs[0])
    }

    /// Writes the batch with one durable flush and returns the assigned
    /// sequence numbers. Nothing becomes visible unless the write succeeds.
    pub fn append_batch(&self, session: &SessionId, batch: Vec<PendingRecord>) -> Result<Vec<u64>, LogError> {
        let log = self.session(session)?;
        let _guard = log.append_lock.lock();
        let first = log.records.read().last().map_or(1, |r| r.global_seq + 1);
        let records: Vec<LogRecord> = batch
            .into_iter()
            .enumerate()
            .map(|(i, p)| LogRecord {
                global_seq: first + i as u64,
                ts: p.ts,
                category: p.category,
                subject: p.subject,
                body: p.body,
            })
            .collect();
        self.store.append(session, &records)?;
        let seqs = records.iter().map(|r| r.global_seq).collect();
        log.records.write().extend(records);
        Ok(seqs)
    }

    pub fn len(&self, session: &SessionId) -> Result<usize, LogError> {
        Ok(self.session(session)?.records.read().len())
    }

    pub fn query(&self, session: &SessionId, filter: &LogFilter) -> Result<Vec<LogRecord>, LogError> {
        let log = self.session(session)?;
        let records = log.records.read();
        Ok(records.iter().filter(|r| filter.matches(r)).cloned().collect())
    }

    /// Chat and avatar records to or from `student`, including broadcasts.
    pub fn transcript(&self, session: &SessionId, student: &PeerId) -> Result<Vec<LogRecord>, LogError> {
        let log = self.session(session)?;
        let records = log.records.read();
        let known = records.iter().any(|r| {
            r.category == Category::Lifecycle
                && matches!(r.body_as::<LifecycleEvent>(), Some(LifecycleEvent::Joined { peer, .. }) if peer == *student)
        });
        if !known {
            return Err(LogError::UnknownPeer(student.clone()));
        }
        Ok(records
            .iter()
            .filter(|r| involves(r, student))
            .cloned()
            .collect())
    }
}

fn involves(r: &LogRecord, student: &PeerId) -> bool {
    let subject_match = r.subject.peer() == Some(student);
    match r.category {
        Category::Chat => {
            subject_match
                || r.body_json()
                    .get("to")
                    .and_then(Value::as_str)
                    .is_some_and(|to| ChatTarget::from(to.to_owned()).includes(student))
        }
        Category::AvatarCommand => {
            subject_match || r.body_json().get("target").and_then(Value::as_str) == Some(student.as_str())
        }
        _ => false,
    }
}

/// Replays lifecycle records into the roster they describe: peer → (alias, role).
pub fn fold_roster(records: &[LogRecord]) -> BTreeMap<PeerId, (String, Role)> {
    let mut roster = BTreeMap::new();
    for r in records.iter().filter(|r| r.category == Category::Lifecycle) {
        match r.body_as::<LifecycleEvent>() {
            Some(LifecycleEvent::Joined { peer, alias, role }) => {
                roster.insert(peer, (alias, role));
            }
            Some(LifecycleEvent::Left { peer, .. }) => {
                roster.remove(&peer);
            }
            Some(LifecycleEvent::Closed) => roster.clear(),
            _ => {}
        }
    }
    roster
}
