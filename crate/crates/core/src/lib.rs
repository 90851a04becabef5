//! Session, signaling, quality, alert, avatar and event-log logic for a live
//! tutoring relay. The transport lives in the `tutorlink-gateway` crate.

pub mod alerts;
pub mod avatar;
pub mod clock;
pub mod error;
pub mod eventlog;
pub mod hub;
pub mod protocol;
pub mod quality;
pub mod session;
pub mod signaling;

pub use error::{Error, Result};
