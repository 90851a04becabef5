use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use tutorlink_core::clock::{Clock, ManualClock, MonotoneClock, SystemClock};
use tutorlink_core::eventlog::{Category, EventLog, FileStore, LogError, LogFilter, LogRecord, Subject};
use tutorlink_core::hub::Hub;
use tutorlink_core::protocol::{
    decode, encode, AvatarBody, Envelope, HeartbeatBody, Payload, PeerId, QualityRequest, Role, RosterEntry,
    SeqTracker, SessionId,
};
use tutorlink_core::session::SessionError;
use tutorlink_core::Error as CoreError;

use crate::config::{ConfigError, GatewayConfig};
use crate::outbox::{Kill, SocketOutbox};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigError),
    #[error("data directory: {0}")]
    Storage(#[from] LogError),
    #[error("recovering sessions: {0}")]
    Recovery(#[from] CoreError),
    #[error("server stopped: {0}")]
    Serve(std::io::Error),
}

#[derive(Clone)]
struct AppState {
    hub: Arc<Hub>,
    outbox: Arc<SocketOutbox>,
    manual: Option<Arc<ManualClock>>,
}

/// A gateway bound to its socket and serving in the background.
pub struct RunningGateway {
    addr: SocketAddr,
    hub: Arc<Hub>,
    outbox: Arc<SocketOutbox>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<(), GatewayError>>,
}

impl RunningGateway {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Sockets with a live outbound queue.
    pub fn connected_sockets(&self) -> usize {
        self.outbox.connected()
    }

    /// Closes every session, lets the sockets drain and stops the server.
    pub async fn shutdown(mut self) -> Result<(), GatewayError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.task.await.map_err(|e| GatewayError::Serve(std::io::Error::other(e)))?
    }
}

/// Binds and starts serving. Sessions found in the data directory come back
/// closed and readable.
pub async fn start(config: GatewayConfig) -> Result<RunningGateway, GatewayError> {
    config.validate()?;
    let (manual, clock): (Option<Arc<ManualClock>>, Arc<dyn Clock>) = if config.simulated_clock {
        let m = Arc::new(ManualClock::new(config.simulated_start_ms));
        (Some(m.clone()), m)
    } else {
        (None, Arc::new(MonotoneClock::new(Arc::new(SystemClock))))
    };
    let store = FileStore::open(&config.data_dir)?;
    let log = Arc::new(EventLog::new(Arc::new(store)));
    let outbox = Arc::new(SocketOutbox::new(clock.clone(), config.queue_limit));
    let hub = Arc::new(Hub::new(config.hub.clone(), clock, log, outbox.clone()));
    let recovered = hub.recover()?;

    let addr = config.addr();
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| GatewayError::BindFailure { addr, source })?;
    let addr = listener.local_addr().map_err(|source| GatewayError::BindFailure { addr, source })?;
    tracing::info!(%addr, recovered, simulated = manual.is_some(), "gateway listening");

    let state = AppState {
        hub: hub.clone(),
        outbox: outbox.clone(),
        manual,
    };
    let app = router(state.clone());
    let ticker = tokio::spawn(tick_loop(hub.clone(), Duration::from_millis(config.tick_interval_ms)));

    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let shutdown_hub = hub.clone();
    let task = tokio::spawn(async move {
        let shutdown = async move {
            let _ = stop_rx.await;
            ticker.abort();
            // every member gets a final Leave; their sockets close after it
            let hub = shutdown_hub.clone();
            let closed = tokio::task::spawn_blocking(move || hub.close_all()).await.unwrap_or_default();
            tracing::info!(sessions = closed.len(), "sessions closed for shutdown");
        };
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(GatewayError::Serve)
    });
    Ok(RunningGateway {
        addr,
        hub,
        outbox,
        stop: Some(stop_tx),
        task,
    })
}

/// Runs until `signal` resolves, then shuts down gracefully.
pub async fn serve(config: GatewayConfig, signal: impl Future<Output = ()>) -> Result<(), GatewayError> {
    let running = start(config).await?;
    signal.await;
    running.shutdown().await
}

async fn tick_loop(hub: Arc<Hub>, every: Duration) {
    let mut interval = tokio::time::interval(every);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        let hub = hub.clone();
        let _ = tokio::task::spawn_blocking(move || hub.tick()).await;
    }
}

fn router(state: AppState) -> Router {
    let mut app = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/ws", get(ws_upgrade))
        .route("/api/prompts", get(prompts))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/join", post(join))
        .route("/api/sessions/{id}/close", post(close))
        .route("/api/sessions/{id}/events", get(events));
    if state.manual.is_some() {
        app = app.route("/api/test/clock/advance", post(advance_clock));
    }
    app.with_state(state)
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "malformed_body",
            message: message.into(),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::Session(SessionError::SessionNotFound) | CoreError::Log(LogError::SessionNotFound(_)) => {
                StatusCode::NOT_FOUND
            }
            CoreError::Session(SessionError::InvalidToken) => StatusCode::UNAUTHORIZED,
            CoreError::Session(SessionError::TutorSeatTaken | SessionError::SessionClosed) => StatusCode::CONFLICT,
            CoreError::Log(LogError::StorageFailure(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs a hub call off the async workers; hub calls fsync.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, CoreError> + Send + 'static) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
        }),
    }
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let v = headers.get(axum::http::header::AUTHORIZATION)?.to_str().ok()?;
    v.strip_prefix("Bearer ").map(|t| t.trim().to_owned())
}

#[derive(Deserialize)]
struct CreateRequest {
    tutor_alias: String,
}

#[derive(Serialize)]
struct CreateResponse {
    session_id: SessionId,
    tutor_token: String,
}

async fn create_session(
    State(st): State<AppState>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> ApiResult<CreateResponse> {
    let Json(req) = body?;
    let hub = st.hub.clone();
    let (session_id, token) = blocking(move || hub.create_session(&req.tutor_alias)).await?;
    Ok(Json(CreateResponse {
        session_id,
        tutor_token: token.as_str().to_owned(),
    }))
}

#[derive(Deserialize)]
struct JoinRequest {
    alias: String,
    role: Role,
    /// The tutor token, when joining as tutor. May also come as a bearer
    /// header.
    #[serde(default)]
    token: Option<String>,
}

#[derive(Serialize)]
struct JoinResponse {
    peer_id: PeerId,
    token: String,
    role: Role,
    ice_servers: Vec<String>,
    roster: Vec<RosterEntry>,
}

async fn join(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<JoinRequest>, JsonRejection>,
) -> ApiResult<JoinResponse> {
    let Json(req) = body?;
    let token = req.token.or_else(|| bearer(&headers));
    let hub = st.hub.clone();
    let session = SessionId::new(id);
    let r = blocking(move || hub.join(&session, &req.alias, req.role, token.as_deref())).await?;
    Ok(Json(JoinResponse {
        peer_id: r.peer,
        token: r.token.as_str().to_owned(),
        role: r.role,
        ice_servers: r.ice_servers,
        roster: r.roster,
    }))
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

fn token_of(headers: &HeaderMap, q: &TokenQuery) -> Result<String, ApiError> {
    bearer(headers).or_else(|| q.token.clone()).ok_or(ApiError {
        status: StatusCode::UNAUTHORIZED,
        code: "invalid_token",
        message: "missing bearer token".into(),
    })
}

async fn close(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Json<Value>, ApiError> {
    let token = token_of(&headers, &q)?;
    let hub = st.hub.clone();
    let session = SessionId::new(id);
    let summary = blocking(move || hub.close_session(&session, &token)).await?;
    Ok(Json(serde_json::to_value(summary).unwrap_or(Value::Null)))
}

#[derive(Deserialize)]
struct EventsQuery {
    token: Option<String>,
    since_seq: Option<u64>,
    /// Comma-separated category names.
    category: Option<String>,
    subject: Option<String>,
}

/// A log record with its body parsed back into JSON.
#[derive(Serialize)]
pub struct RecordView {
    pub global_seq: u64,
    pub ts: u64,
    pub category: Category,
    pub subject: String,
    pub body: Value,
}

impl From<LogRecord> for RecordView {
    fn from(r: LogRecord) -> Self {
        RecordView {
            global_seq: r.global_seq,
            ts: r.ts,
            category: r.category,
            subject: r.subject.to_string(),
            body: r.body_json(),
        }
    }
}

async fn events(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    query: Result<Query<EventsQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Vec<RecordView>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let token = token_of(
        &headers,
        &TokenQuery {
            token: q.token.clone(),
        },
    )?;
    let categories = match &q.category {
        None => None,
        Some(list) => Some(
            list.split(',')
                .filter(|s| !s.is_empty())
                .map(|s| Category::parse(s).ok_or_else(|| ApiError::bad_request(format!("unknown category {s:?}"))))
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    let subject = q.subject.as_deref().map(Subject::parse);
    let filter = LogFilter {
        categories,
        subject,
        ts_range: None,
        seq_range: q.since_seq.map(|s| (s.saturating_add(1), u64::MAX)),
    };
    let hub = st.hub.clone();
    let session = SessionId::new(id);
    let records = blocking(move || {
        hub.authorize_tutor(&session, &token)?;
        hub.query(&session, &filter)
    })
    .await?;
    Ok(Json(records.into_iter().map(RecordView::from).collect()))
}

async fn prompts(State(st): State<AppState>) -> Json<Vec<String>> {
    Json(st.hub.canned_prompts().to_vec())
}

#[derive(Deserialize)]
struct AdvanceRequest {
    ms: u64,
}

/// Test-only: moves the simulated clock and runs the periodic work once.
async fn advance_clock(
    State(st): State<AppState>,
    body: Result<Json<AdvanceRequest>, JsonRejection>,
) -> ApiResult<Value> {
    let Json(req) = body?;
    let Some(manual) = st.manual.clone() else {
        return Err(ApiError::bad_request("clock is not simulated"));
    };
    let hub = st.hub.clone();
    let now = blocking(move || {
        let now = manual.advance(req.ms);
        hub.tick();
        Ok(now)
    })
    .await?;
    Ok(Json(json!({ "now_ms": now })))
}

#[derive(Deserialize)]
struct WsParams {
    session: String,
    token: String,
}

async fn ws_upgrade(State(st): State<AppState>, Query(p): Query<WsParams>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| handle_socket(st, socket, SessionId::new(p.session), p.token))
}

fn error_payload(code: &str, reason: impl Into<String>) -> Payload {
    Payload::error(code, reason)
}

/// One frame from an unregistered socket, numbered 1.
fn lone_frame(clock: &dyn Clock, session: &SessionId, payload: Payload) -> Option<String> {
    let session = if session.as_str().is_empty() {
        SessionId::new("-")
    } else {
        session.clone()
    };
    encode(&Envelope::new(1, clock.now_ms(), session, PeerId::server(), payload)).ok()
}

async fn handle_socket(st: AppState, socket: WebSocket, session: SessionId, token: String) {
    let (mut ws_tx, mut ws_rx) = socket.split();
    let clock = st.outbox.clock().clone();

    let hub = st.hub.clone();
    let (s2, t2) = (session.clone(), token.clone());
    let identity = tokio::task::spawn_blocking(move || hub.identify(&s2, &t2)).await;
    let (peer, _role) = match identity {
        Ok(Ok(id)) => id,
        Ok(Err(e)) => {
            let reason = match &e {
                CoreError::Session(SessionError::SessionNotFound) => "session not found",
                _ => "invalid token",
            };
            if let Some(text) = lone_frame(clock.as_ref(), &session, error_payload(e.code(), reason)) {
                let _ = ws_tx.send(Message::Text(text.into())).await;
            }
            let _ = ws_tx.close().await;
            return;
        }
        Err(_) => return,
    };

    // register before connecting so the acknowledgement and everything the
    // connect triggers lands in this socket's queue
    let (sink, mut rx) = st.outbox.register(&session, &peer);
    let hub = st.hub.clone();
    let (s2, t2) = (session.clone(), token.clone());
    let conn = match tokio::task::spawn_blocking(move || hub.connect(&s2, &t2)).await {
        Ok(Ok(conn)) => conn,
        Ok(Err(e)) => {
            st.outbox.unregister(&session, &peer, sink.socket_id);
            if let Some(text) = lone_frame(clock.as_ref(), &session, error_payload(e.code(), e.to_string())) {
                let _ = ws_tx.send(Message::Text(text.into())).await;
            }
            let _ = ws_tx.close().await;
            return;
        }
        Err(_) => {
            st.outbox.unregister(&session, &peer, sink.socket_id);
            return;
        }
    };
    tracing::debug!(session = %session, peer = %peer, conn = conn.id, "socket connected");

    let writer_sink = sink.clone();
    let writer_clock = clock.clone();
    let mut writer = tokio::spawn(async move {
        loop {
            tokio::select! {
                biased;
                _ = writer_sink.kill.notified() => {
                    if writer_sink.kill_reason() == Some(Kill::Overflow) {
                        let bye = error_payload("queue_overflow", "outbound queue overflow");
                        if let Some(text) = writer_sink.farewell(writer_clock.as_ref(), bye) {
                            let _ = ws_tx.send(Message::Text(text.into())).await;
                        }
                    }
                    break;
                }
                frame = rx.recv() => {
                    let Some(frame) = frame else { break };
                    if ws_tx.send(Message::Text(frame.text.into())).await.is_err() {
                        break;
                    }
                    if frame.close_after {
                        break;
                    }
                }
            }
        }
        let _ = ws_tx.close().await;
    });

    let mut seqs = SeqTracker::default();
    loop {
        let msg = tokio::select! {
            _ = &mut writer => break,
            msg = ws_rx.next() => msg,
        };
        let text = match msg {
            Some(Ok(Message::Text(t))) => t.to_string(),
            Some(Ok(Message::Binary(b))) => String::from_utf8_lossy(&b).into_owned(),
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
            Some(Ok(_)) => continue,
        };
        let hub = st.hub.clone();
        let ctx = FrameContext {
            session: session.clone(),
            peer: peer.clone(),
        };
        let outcome = tokio::task::spawn_blocking(move || {
            let o = handle_frame(&hub, &ctx, &mut seqs, text.as_bytes());
            (o, seqs)
        })
        .await;
        let Ok((outcome, back)) = outcome else { break };
        seqs = back;
        if let Some(reply) = outcome.reply {
            sink.push(clock.as_ref(), &PeerId::server(), reply, outcome.close);
        }
        if outcome.close {
            // the writer closes after the queued reply
            let _ = (&mut writer).await;
            break;
        }
    }

    writer.abort();
    st.outbox.unregister(&session, &peer, sink.socket_id);
    let hub = st.hub.clone();
    let (s2, p2) = (session.clone(), peer.clone());
    let _ = tokio::task::spawn_blocking(move || hub.disconnect(&s2, &p2, conn.id)).await;
    tracing::debug!(session = %session, peer = %peer, "socket closed");
}

struct FrameContext {
    session: SessionId,
    peer: PeerId,
}

#[derive(Default)]
struct Outcome {
    reply: Option<Payload>,
    close: bool,
}

impl Outcome {
    fn reply(p: Payload) -> Self {
        Outcome {
            reply: Some(p),
            close: false,
        }
    }

    fn error(e: &CoreError) -> Self {
        Outcome::reply(error_payload(e.code(), e.to_string()))
    }
}

fn violation(hub: &Hub, ctx: &FrameContext, code: &str, reason: String) -> Outcome {
    let _ = hub.record_violation(&ctx.session, &ctx.peer, &reason);
    Outcome::reply(error_payload(code, reason))
}

/// Validates and routes one inbound frame. Frames of one socket are handled
/// strictly one after another.
fn handle_frame(hub: &Hub, ctx: &FrameContext, seqs: &mut SeqTracker, bytes: &[u8]) -> Outcome {
    let env = match decode(bytes) {
        Ok(env) => env,
        Err(e) => return violation(hub, ctx, e.code(), e.to_string()),
    };
    if env.session != ctx.session || env.sender != ctx.peer {
        return violation(
            hub,
            ctx,
            "sender_mismatch",
            "envelope session or sender does not match the connection".into(),
        );
    }
    if let Err(e) = seqs.accept(env.seq) {
        let mut out = violation(hub, ctx, "sequence_violation", e.to_string());
        out.close = true;
        return out;
    }
    let (s, me) = (&ctx.session, &ctx.peer);
    let result: Result<Option<Payload>, CoreError> = match env.payload {
        Payload::Heartbeat(_) => hub.heartbeat(s, me).map(|_| Some(Payload::Heartbeat(HeartbeatBody {}))),
        Payload::Leave(l) => hub
            .leave(s, me, l.reason.as_deref().unwrap_or("left"))
            .map(|_| None),
        Payload::Offer(b) => hub.relay_offer(s, me, &b.to, b.sdp).map(|_| None),
        Payload::Answer(b) => hub.relay_answer(s, me, &b.to, b.sdp).map(|_| None),
        Payload::IceCandidate(b) => hub.relay_candidate(s, me, &b.to, b.candidate).map(|_| None),
        Payload::QualityRequest(QualityRequest::Zoom { target }) => hub.set_zoom(s, me, target).map(|_| None),
        Payload::QualityRequest(QualityRequest::Tier { to, tier }) => {
            hub.request_renegotiation(s, me, &to, tier).map(|_| None)
        }
        Payload::Chat(c) => {
            if c.from != *me {
                return violation(hub, ctx, "sender_mismatch", "chat author is not the sender".into());
            }
            hub.chat(s, me, c.to, &c.text).map(|_| None)
        }
        Payload::Telemetry(t) => hub.ingest(s, me, t).map(|_| None),
        Payload::AvatarCommand(AvatarBody::Dispatch(d)) => {
            hub.dispatch(s, me, &d.target, &d.text, d.show_bubble).map(|_| None)
        }
        Payload::Join(_) => return Outcome::reply(error_payload("already_joined", "this socket is already joined")),
        other => {
            return violation(
                hub,
                ctx,
                "role_violation",
                format!("{} is sent by the server only", other.kind()),
            )
        }
    };
    match result {
        Ok(reply) => Outcome { reply, close: false },
        Err(e) => Outcome::error(&e),
    }
}
