//! Network front door: a WebSocket endpoint for live envelopes and a small
//! HTTP API for session setup and log retrieval.

pub mod config;
pub mod outbox;
pub mod server;

pub use config::{ConfigError, GatewayConfig};
pub use server::{serve, start, GatewayError, RunningGateway};
