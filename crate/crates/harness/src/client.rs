//! HTTP calls and one WebSocket client per synthetic participant.
//!
//! A client can stand in for the browser's signaling: students offer when
//! the gateway asks for a tier, the tutor answers every offer. Payloads are
//! dummies; no media flows.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot, Notify};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use tutorlink_core::protocol::{
    decode, encode, CandidateBody, Envelope, ErrorBody, HeartbeatBody, LeaveBody, Payload, PeerId, QualityRequest,
    Role, RosterEntry, SdpBody, SenderSeqs, SessionId,
};

use crate::HarnessError;

const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

pub fn wall_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// The gateway's HTTP surface.
#[derive(Clone)]
pub struct Api {
    http: reqwest::Client,
    addr: String,
}

pub struct Joined {
    pub peer: PeerId,
    pub token: String,
}

impl Api {
    /// `addr` is `host:port`, with or without an `http://` prefix.
    pub fn new(addr: &str) -> Api {
        let addr = addr.trim_start_matches("http://").trim_end_matches('/').to_owned();
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("http client");
        Api { http, addr }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    async fn call(&self, what: &str, req: reqwest::RequestBuilder) -> Result<Value, HarnessError> {
        let resp = req.send().await.map_err(|e| HarnessError::connection(&self.addr, e))?;
        let status = resp.status();
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        if !status.is_success() {
            let reason = body["error"].as_str().map_or_else(|| status.to_string(), str::to_owned);
            return Err(HarnessError::refused(what, reason));
        }
        Ok(body)
    }

    /// Returns the session id and the tutor token.
    pub async fn create_session(&self, tutor_alias: &str) -> Result<(SessionId, String), HarnessError> {
        let req = self
            .http
            .post(self.url("/api/sessions"))
            .json(&json!({ "tutor_alias": tutor_alias }));
        let v = self.call("session creation", req).await?;
        match (v["session_id"].as_str(), v["tutor_token"].as_str()) {
            (Some(id), Some(token)) => Ok((SessionId::new(id), token.to_owned())),
            _ => Err(HarnessError::refused("session creation", format!("unexpected body {v}"))),
        }
    }

    pub async fn join_student(&self, session: &SessionId, alias: &str) -> Result<Joined, HarnessError> {
        let req = self
            .http
            .post(self.url(&format!("/api/sessions/{session}/join")))
            .json(&json!({ "alias": alias, "role": "student" }));
        let v = self.call(&format!("join of {alias:?}"), req).await?;
        match (v["peer_id"].as_str(), v["token"].as_str()) {
            (Some(peer), Some(token)) => Ok(Joined {
                peer: PeerId::new(peer),
                token: token.to_owned(),
            }),
            _ => Err(HarnessError::refused("join", format!("unexpected body {v}"))),
        }
    }

    /// Log records, tutor only. `query` is appended to the URL as is.
    pub async fn events(&self, session: &SessionId, tutor_token: &str, query: &str) -> Result<Vec<Value>, HarnessError> {
        let req = self
            .http
            .get(self.url(&format!("/api/sessions/{session}/events?{query}")))
            .bearer_auth(tutor_token);
        match self.call("event query", req).await? {
            Value::Array(records) => Ok(records),
            other => Err(HarnessError::refused("event query", format!("unexpected body {other}"))),
        }
    }

    pub async fn close_session(&self, session: &SessionId, tutor_token: &str) -> Result<(), HarnessError> {
        let req = self
            .http
            .post(self.url(&format!("/api/sessions/{session}/close")))
            .bearer_auth(tutor_token);
        self.call("session close", req).await.map(drop)
    }

    /// Round-trip time of one health probe.
    pub async fn healthz(&self) -> Result<Duration, HarnessError> {
        let started = Instant::now();
        let resp = self
            .http
            .get(self.url("/healthz"))
            .send()
            .await
            .map_err(|e| HarnessError::connection(&self.addr, e))?;
        let _ = resp.bytes().await;
        Ok(started.elapsed())
    }

    /// Moves a simulated gateway clock forward; returns the new time.
    pub async fn advance_clock(&self, ms: u64) -> Result<u64, HarnessError> {
        let req = self.http.post(self.url("/api/test/clock/advance")).json(&json!({ "ms": ms }));
        let v = self
            .call("clock advance", req)
            .await
            .map_err(|e| match e {
                HarnessError::Refused { .. } => {
                    HarnessError::refused("clock advance", "the gateway does not run a simulated clock")
                }
                other => other,
            })?;
        v["now_ms"]
            .as_u64()
            .ok_or_else(|| HarnessError::refused("clock advance", format!("unexpected body {v}")))
    }
}

#[derive(Clone, Debug)]
pub struct Observed {
    /// Scenario step that was current when the frame arrived.
    pub step: usize,
    pub receiver: String,
    pub at: Instant,
    pub envelope: Envelope,
}

#[derive(Clone, Default)]
pub struct ClientOptions {
    /// Students: offer (plus one candidate) when asked for a tier.
    pub auto_offer: bool,
    /// Tutor: answer every offer (plus one candidate).
    pub auto_answer: bool,
    pub collector: Option<mpsc::UnboundedSender<Observed>>,
    pub step: Option<Arc<AtomicUsize>>,
    /// Counts every non-heartbeat frame sent or received, shared across a
    /// run so the runner can tell when traffic has settled.
    pub activity: Option<Arc<AtomicU64>>,
}

#[derive(Default)]
struct State {
    tutor: Option<PeerId>,
    awaiting_answer: bool,
    connected_at: Option<Instant>,
    answers: usize,
    pings: VecDeque<(Instant, Option<oneshot::Sender<()>>)>,
    rtts: Vec<Duration>,
    violations: Vec<String>,
    errors: Vec<ErrorBody>,
    closed: bool,
}

struct Shared {
    alias: String,
    me: PeerId,
    role: Role,
    options: ClientOptions,
    /// Taken on shutdown; the writer closes the socket once it is gone.
    out: Mutex<Option<mpsc::UnboundedSender<Payload>>>,
    state: Mutex<State>,
    connected: Notify,
}

impl Shared {
    fn bump(&self) {
        if let Some(a) = &self.options.activity {
            a.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn send(&self, payload: Payload) {
        if !matches!(payload, Payload::Heartbeat(_)) {
            self.bump();
        }
        if let Some(out) = self.out.lock().unwrap().as_ref() {
            let _ = out.send(payload);
        }
    }

    fn learn_tutor(&self, roster: &[RosterEntry]) {
        if let Some(t) = roster.iter().find(|e| e.role == Role::Tutor) {
            self.state.lock().unwrap().tutor = Some(t.peer.clone());
        }
    }

    fn handle(&self, env: &Envelope, seqs: &mut SenderSeqs) {
        if let Err(v) = seqs.accept(&env.sender, env.seq) {
            self.state
                .lock()
                .unwrap()
                .violations
                .push(format!("{} from {}: {v}", env.kind(), env.sender));
        }
        match &env.payload {
            Payload::JoinAck(ack) => self.learn_tutor(&ack.roster),
            Payload::RosterUpdate(r) => self.learn_tutor(&r.roster),
            Payload::QualityRequest(QualityRequest::Tier { to, .. })
                if self.options.auto_offer && self.role == Role::Student && *to == self.me =>
            {
                let tutor = {
                    let mut st = self.state.lock().unwrap();
                    match st.tutor.clone() {
                        // an offer is already out; the gateway repeats the
                        // request after the answer if it still matters
                        Some(t) if !st.awaiting_answer => {
                            st.awaiting_answer = true;
                            Some(t)
                        }
                        _ => None,
                    }
                };
                if let Some(t) = tutor {
                    self.send(Payload::Offer(SdpBody {
                        to: t.clone(),
                        sdp: format!("v=0 offer from {}", self.me),
                    }));
                    self.send(Payload::IceCandidate(CandidateBody {
                        to: t,
                        candidate: format!("candidate:{} 1 udp 1 127.0.0.1 9 typ host", self.me),
                    }));
                }
            }
            Payload::Offer(_) if self.options.auto_answer && self.role == Role::Tutor => {
                self.send(Payload::Answer(SdpBody {
                    to: env.sender.clone(),
                    sdp: format!("v=0 answer for {}", env.sender),
                }));
                self.send(Payload::IceCandidate(CandidateBody {
                    to: env.sender.clone(),
                    candidate: "candidate:tutor 1 udp 1 127.0.0.1 9 typ host".into(),
                }));
            }
            Payload::Answer(_) => {
                let mut st = self.state.lock().unwrap();
                st.awaiting_answer = false;
                st.answers += 1;
                st.connected_at.get_or_insert_with(Instant::now);
                drop(st);
                self.connected.notify_waiters();
            }
            Payload::Heartbeat(_) if env.sender == PeerId::server() => {
                let mut st = self.state.lock().unwrap();
                if let Some((sent, done)) = st.pings.pop_front() {
                    st.rtts.push(sent.elapsed());
                    if let Some(done) = done {
                        let _ = done.send(());
                    }
                }
            }
            Payload::Error(e) => self.state.lock().unwrap().errors.push(e.clone()),
            _ => {}
        }
        if !matches!(env.payload, Payload::Heartbeat(_)) {
            self.bump();
        }
        if let Some(c) = &self.options.collector {
            let step = self.options.step.as_ref().map_or(0, |s| s.load(Ordering::SeqCst));
            let _ = c.send(Observed {
                step,
                receiver: self.alias.clone(),
                at: Instant::now(),
                envelope: env.clone(),
            });
        }
    }

    fn close(&self) {
        let mut st = self.state.lock().unwrap();
        st.closed = true;
        // dropping the senders wakes anyone waiting on a ping
        st.pings.clear();
        drop(st);
        self.connected.notify_waiters();
    }
}

pub struct Client {
    shared: Arc<Shared>,
    reader: JoinHandle<()>,
    writer: JoinHandle<()>,
}

impl Client {
    /// Opens the socket and waits for the join acknowledgement.
    pub async fn connect(
        api: &Api,
        session: &SessionId,
        token: &str,
        alias: &str,
        options: ClientOptions,
    ) -> Result<Client, HarnessError> {
        let url = format!("ws://{}/ws?session={session}&token={token}", api.addr());
        let (stream, _) = tokio_tungstenite::connect_async(url)
            .await
            .map_err(|e| HarnessError::connection(api.addr(), e))?;
        let (mut sink, mut stream) = stream.split();

        let first = tokio::time::timeout(REPLY_TIMEOUT, next_envelope(&mut stream))
            .await
            .map_err(|_| HarnessError::connection(api.addr(), "no join acknowledgement"))?;
        let ack = match first {
            Some(Ok(env)) => env,
            Some(Err(e)) => return Err(HarnessError::refused("socket", e)),
            None => return Err(HarnessError::connection(api.addr(), "socket closed before the join acknowledgement")),
        };
        let (me, role) = match &ack.payload {
            Payload::JoinAck(a) => (a.peer.clone(), a.role),
            Payload::Error(e) => return Err(HarnessError::refused("socket", &e.reason)),
            other => return Err(HarnessError::refused("socket", format!("first frame was {}", other.kind()))),
        };

        let (out, mut rx) = mpsc::unbounded_channel::<Payload>();
        let shared = Arc::new(Shared {
            alias: alias.to_owned(),
            me: me.clone(),
            role,
            options,
            out: Mutex::new(Some(out)),
            state: Mutex::new(State::default()),
            connected: Notify::new(),
        });
        let mut seqs = SenderSeqs::default();
        shared.handle(&ack, &mut seqs);

        let session = session.clone();
        let writer = tokio::spawn(async move {
            let mut seq = 0u64;
            while let Some(payload) = rx.recv().await {
                seq += 1;
                let env = Envelope::new(seq, wall_ms(), session.clone(), me.clone(), payload);
                let Ok(text) = encode(&env) else { continue };
                if sink.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            let _ = sink.send(Message::Close(None)).await;
        });

        let reader_shared = shared.clone();
        let reader = tokio::spawn(async move {
            while let Some(frame) = next_envelope(&mut stream).await {
                match frame {
                    Ok(env) => reader_shared.handle(&env, &mut seqs),
                    Err(e) => reader_shared.state.lock().unwrap().violations.push(e),
                }
            }
            reader_shared.close();
        });

        Ok(Client { shared, reader, writer })
    }

    pub fn alias(&self) -> &str {
        &self.shared.alias
    }

    pub fn peer(&self) -> &PeerId {
        &self.shared.me
    }

    pub fn role(&self) -> Role {
        self.shared.role
    }

    pub fn send(&self, payload: Payload) {
        self.shared.send(payload);
    }

    /// Sends a heartbeat and resolves when the gateway echoes it. Every frame
    /// the gateway queued for this socket before the echo has been handled by
    /// then.
    pub async fn sync(&self) -> bool {
        let (tx, rx) = oneshot::channel();
        {
            let mut st = self.shared.state.lock().unwrap();
            if st.closed {
                return false;
            }
            st.pings.push_back((Instant::now(), Some(tx)));
        }
        self.shared.send(Payload::Heartbeat(HeartbeatBody {}));
        matches!(tokio::time::timeout(REPLY_TIMEOUT, rx).await, Ok(Ok(())))
    }

    /// A heartbeat whose echo only feeds the round-trip statistics.
    pub fn ping(&self) {
        let mut st = self.shared.state.lock().unwrap();
        if st.closed {
            return;
        }
        st.pings.push_back((Instant::now(), None));
        drop(st);
        self.shared.send(Payload::Heartbeat(HeartbeatBody {}));
    }

    pub fn leave(&self, reason: &str) {
        self.send(Payload::Leave(LeaveBody {
            peer: Some(self.shared.me.clone()),
            reason: Some(reason.to_owned()),
        }));
    }

    pub fn tutor(&self) -> Option<PeerId> {
        self.shared.state.lock().unwrap().tutor.clone()
    }

    pub fn connected_at(&self) -> Option<Instant> {
        self.shared.state.lock().unwrap().connected_at
    }

    pub fn answers(&self) -> usize {
        self.shared.state.lock().unwrap().answers
    }

    /// Waits until the first answer arrived; false on timeout or close.
    pub async fn wait_connected(&self, within: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + within;
        loop {
            let notified = self.shared.connected.notified();
            {
                let st = self.shared.state.lock().unwrap();
                if st.connected_at.is_some() {
                    return true;
                }
                if st.closed {
                    return false;
                }
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return self.connected_at().is_some();
            }
        }
    }

    pub fn rtts(&self) -> Vec<Duration> {
        self.shared.state.lock().unwrap().rtts.clone()
    }

    /// Inbound sequence gaps and undecodable frames.
    pub fn violations(&self) -> Vec<String> {
        self.shared.state.lock().unwrap().violations.clone()
    }

    pub fn errors(&self) -> Vec<ErrorBody> {
        self.shared.state.lock().unwrap().errors.clone()
    }

    pub fn is_closed(&self) -> bool {
        self.shared.state.lock().unwrap().closed
    }

    /// Closes the socket and waits for both tasks.
    pub async fn shutdown(self) {
        let Client { shared, reader, writer } = self;
        shared.out.lock().unwrap().take();
        let _ = tokio::time::timeout(REPLY_TIMEOUT, writer).await;
        reader.abort();
        let _ = reader.await;
    }
}

type WsRead = futures::stream::SplitStream<
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>,
>;

/// Next decoded frame. `None` once the socket is gone.
async fn next_envelope(stream: &mut WsRead) -> Option<Result<Envelope, String>> {
    loop {
        match stream.next().await? {
            Ok(Message::Text(t)) => return Some(decode(t.as_bytes()).map_err(|e| format!("{}: {e}", e.code()))),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}
