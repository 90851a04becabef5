#![allow(dead_code)]

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use tutorlink_core::protocol::{decode, encode, Envelope, MessageKind, Payload, PeerId, SessionId};
use tutorlink_gateway::{GatewayConfig, RunningGateway};

pub struct Gw {
    pub gw: RunningGateway,
    pub http: reqwest::Client,
    pub dir: tempfile::TempDir,
}

pub fn tmp() -> tempfile::TempDir {
    // fsync-heavy tests run much faster on tmpfs when it exists
    match std::path::Path::new("/dev/shm").is_dir() {
        true => tempfile::tempdir_in("/dev/shm").unwrap(),
        false => tempfile::tempdir().unwrap(),
    }
}

pub fn config(dir: &std::path::Path) -> GatewayConfig {
    GatewayConfig {
        port: 0,
        data_dir: dir.to_owned(),
        ..GatewayConfig::default()
    }
}

pub async fn start_with(config: GatewayConfig, dir: tempfile::TempDir) -> Gw {
    let gw = tutorlink_gateway::start(config).await.unwrap();
    Gw {
        gw,
        http: reqwest::Client::new(),
        dir,
    }
}

pub async fn start() -> Gw {
    let dir = tmp();
    let c = config(dir.path());
    start_with(c, dir).await
}

impl Gw {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.gw.base_url(), path)
    }

    pub async fn post(&self, path: &str, body: Value, token: Option<&str>) -> (u16, Value) {
        let mut req = self.http.post(self.url(path)).json(&body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (u16, Value) {
        let mut req = self.http.get(self.url(path));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    /// Creates a session; returns (session id, tutor token).
    pub async fn create(&self) -> (String, String) {
        let (s, v) = self.post("/api/sessions", json!({ "tutor_alias": "Ms. T" }), None).await;
        assert_eq!(s, 200, "{v}");
        (
            v["session_id"].as_str().unwrap().to_owned(),
            v["tutor_token"].as_str().unwrap().to_owned(),
        )
    }

    /// Joins a student; returns (peer id, token).
    pub async fn student(&self, session: &str, alias: &str) -> (String, String) {
        let (s, v) = self
            .post(
                &format!("/api/sessions/{session}/join"),
                json!({ "alias": alias, "role": "student" }),
                None,
            )
            .await;
        assert_eq!(s, 200, "{v}");
        (
            v["peer_id"].as_str().unwrap().to_owned(),
            v["token"].as_str().unwrap().to_owned(),
        )
    }

    pub async fn events(&self, session: &str, token: &str, query: &str) -> Vec<Value> {
        let (s, v) = self.get(&format!("/api/sessions/{session}/events?{query}"), Some(token)).await;
        assert_eq!(s, 200, "{v}");
        v.as_array().unwrap().clone()
    }

    pub async fn ws(&self, session: &str, token: &str) -> Ws {
        let url = format!("ws://{}/ws?session={session}&token={token}", self.gw.addr());
        let (stream, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        Ws {
            stream,
            session: SessionId::new(session),
            me: PeerId::new("?"),
            seq: 0,
        }
    }
}

pub struct Ws {
    pub stream: WebSocketStream<MaybeTlsStream<TcpStream>>,
    pub session: SessionId,
    pub me: PeerId,
    pub seq: u64,
}

impl Ws {
    /// Next envelope, or None once the socket closed.
    pub async fn recv(&mut self) -> Option<Envelope> {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(5), self.stream.next())
                .await
                .expect("timed out waiting for a frame");
            match msg {
                Some(Ok(Message::Text(t))) => return Some(decode(t.as_bytes()).expect("server frames decode")),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return None,
                Some(Ok(_)) => continue,
            }
        }
    }

    /// Skips frames until one of `kind` arrives.
    pub async fn expect(&mut self, kind: MessageKind) -> Envelope {
        loop {
            let e = self.recv().await.unwrap_or_else(|| panic!("closed while waiting for {kind}"));
            if e.kind() == kind {
                return e;
            }
        }
    }

    /// Reads the JoinAck and learns our peer id.
    pub async fn joined(&mut self) -> Envelope {
        let e = self.recv().await.expect("join ack");
        match &e.payload {
            Payload::JoinAck(a) => self.me = a.peer.clone(),
            other => panic!("first frame was {other:?}"),
        }
        e
    }

    pub async fn send(&mut self, payload: Payload) {
        self.seq += 1;
        let env = Envelope::new(self.seq, 0, self.session.clone(), self.me.clone(), payload);
        self.send_raw(encode(&env).unwrap()).await;
    }

    pub async fn send_raw(&mut self, text: String) {
        self.stream.send(Message::Text(text.into())).await.unwrap();
    }
}
