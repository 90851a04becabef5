//! Per-socket outbound queues.
//!
//! The hub hands deliveries over under the session lock, so frames enter a
//! socket's queue in commit order. Sequence numbers are assigned at that
//! point, per sender, and the frame is encoded once.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use dashmap::DashMap;
use parking_lot::Mutex;
use tokio::sync::{mpsc, Notify};

use tutorlink_core::clock::Clock;
use tutorlink_core::hub::Outbox;
use tutorlink_core::protocol::{encode, Delivery, Envelope, Payload, PeerId, SenderCounters, SessionId};

#[derive(Debug)]
pub struct Frame {
    pub text: String,
    /// Close the socket once this frame is written.
    pub close_after: bool,
}

/// Why a writer stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kill {
    Overflow,
    Replaced,
}

pub struct Sink {
    pub socket_id: u64,
    session: SessionId,
    tx: mpsc::Sender<Frame>,
    /// Numbering state; `None` until the join acknowledgement goes out.
    seqs: Mutex<Option<SenderCounters>>,
    killed: AtomicBool,
    kill_reason: Mutex<Option<Kill>>,
    pub kill: Notify,
}

impl Sink {
    fn frame(&self, clock: &dyn Clock, sender: &PeerId, payload: Payload) -> Option<String> {
        let seq = self.seqs.lock().get_or_insert_with(SenderCounters::default).next_seq(sender);
        let env = Envelope::new(seq, clock.now_ms(), self.session.clone(), sender.clone(), payload);
        match encode(&env) {
            Ok(text) => Some(text),
            Err(e) => {
                tracing::error!(error = %e, "dropping unencodable envelope");
                None
            }
        }
    }

    /// Queues a frame without waiting. A full queue kills the socket.
    ///
    /// The sink exists a moment before the hub binds the connection; frames
    /// addressed to the peer in that gap are dropped, as they would be for a
    /// peer with no socket, so the acknowledgement is always the first frame.
    pub fn push(&self, clock: &dyn Clock, sender: &PeerId, payload: Payload, close_after: bool) {
        if self.killed.load(Ordering::Acquire) {
            return;
        }
        // one lock around numbering and queueing keeps seq order equal to
        // queue order
        let mut guard = self.seqs.lock();
        if guard.is_none() {
            if !matches!(payload, Payload::JoinAck(_)) {
                return;
            }
            *guard = Some(SenderCounters::default());
        }
        let seq = guard.as_mut().expect("opened above").next_seq(sender);
        let env = Envelope::new(seq, clock.now_ms(), self.session.clone(), sender.clone(), payload);
        let text = match encode(&env) {
            Ok(text) => text,
            Err(e) => {
                tracing::error!(error = %e, "dropping unencodable envelope");
                return;
            }
        };
        if let Err(mpsc::error::TrySendError::Full(_)) = self.tx.try_send(Frame { text, close_after }) {
            drop(guard);
            self.stop(Kill::Overflow);
        }
    }

    pub fn stop(&self, why: Kill) {
        if !self.killed.swap(true, Ordering::AcqRel) {
            *self.kill_reason.lock() = Some(why);
            self.kill.notify_one();
        }
    }

    pub fn kill_reason(&self) -> Option<Kill> {
        *self.kill_reason.lock()
    }

    /// Encodes a final server frame outside the queue, for the writer's
    /// farewell after a kill.
    pub fn farewell(&self, clock: &dyn Clock, payload: Payload) -> Option<String> {
        self.frame(clock, &PeerId::server(), payload)
    }
}

pub struct SocketOutbox {
    clock: Arc<dyn Clock>,
    sinks: DashMap<(SessionId, PeerId), Arc<Sink>>,
    next_socket: AtomicU64,
    queue_limit: usize,
}

impl SocketOutbox {
    pub fn new(clock: Arc<dyn Clock>, queue_limit: usize) -> Self {
        SocketOutbox {
            clock,
            sinks: DashMap::new(),
            next_socket: AtomicU64::new(1),
            queue_limit,
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Installs a fresh queue for the peer. An older socket of the same peer
    /// is told to stop.
    pub fn register(&self, session: &SessionId, peer: &PeerId) -> (Arc<Sink>, mpsc::Receiver<Frame>) {
        let (tx, rx) = mpsc::channel(self.queue_limit);
        let sink = Arc::new(Sink {
            socket_id: self.next_socket.fetch_add(1, Ordering::Relaxed),
            session: session.clone(),
            tx,
            seqs: Mutex::new(None),
            killed: AtomicBool::new(false),
            kill_reason: Mutex::new(None),
            kill: Notify::new(),
        });
        if let Some(old) = self.sinks.insert((session.clone(), peer.clone()), sink.clone()) {
            old.stop(Kill::Replaced);
        }
        (sink, rx)
    }

    /// Removes the peer's queue if it still belongs to `socket_id`.
    pub fn unregister(&self, session: &SessionId, peer: &PeerId, socket_id: u64) {
        self.sinks
            .remove_if(&(session.clone(), peer.clone()), |_, s| s.socket_id == socket_id);
    }

    pub fn connected(&self) -> usize {
        self.sinks.len()
    }
}

impl Outbox for SocketOutbox {
    fn deliver(&self, session: &SessionId, d: Delivery) {
        let Some(sink) = self.sinks.get(&(session.clone(), d.to.clone())).map(|s| s.clone()) else {
            return;
        };
        // a Leave addressed to the peer itself, or a session-wide Leave, ends
        // its socket
        let close_after = match &d.payload {
            Payload::Leave(l) => l.peer.as_ref().is_none_or(|p| *p == d.to),
            _ => false,
        };
        sink.push(self.clock.as_ref(), &d.sender, d.payload, close_after);
    }
}
