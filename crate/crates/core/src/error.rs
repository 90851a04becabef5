use thiserror::Error;

use crate::alerts::AlertError;
use crate::avatar::AvatarError;
use crate::eventlog::LogError;
use crate::protocol::MAX_CHAT_CHARS;
use crate::quality::QualityError;
use crate::session::SessionError;
use crate::signaling::SignalError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Alert(#[from] AlertError),
    #[error(transparent)]
    Avatar(#[from] AvatarError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("role violation: {0}")]
    RoleViolation(String),
    #[error("text is empty")]
    EmptyText,
    #[error("text exceeds {MAX_CHAT_CHARS} characters")]
    TextTooLong,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable code, used in error envelopes and HTTP bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Session(e) => match e {
                SessionError::SessionNotFound => "session_not_found",
                SessionError::SessionClosed => "session_closed",
                SessionError::TutorSeatTaken => "tutor_seat_taken",
                SessionError::InvalidToken => "invalid_token",
                SessionError::UnknownPeer(_) => "unknown_peer",
                SessionError::InvalidAlias => "invalid_alias",
            },
            Error::Signal(e) => match e {
                SignalError::IllegalTransition { .. } => "illegal_transition",
                SignalError::NotPaired { .. } => "not_paired",
                SignalError::RoleViolation(_) => "role_violation",
            },
            Error::Quality(_) => "zoom_target_not_in_feeds",
            Error::Alert(_) => "unknown_student",
            Error::Avatar(AvatarError::InvalidRate(_)) => "invalid_rate",
            Error::Avatar(AvatarError::EmptyText) | Error::EmptyText => "empty_text",
            Error::Log(LogError::SessionNotFound(_)) => "session_not_found",
            Error::Log(LogError::UnknownPeer(_)) => "unknown_peer",
            Error::Log(LogError::StorageFailure(_)) => "storage_failure",
            Error::RoleViolation(_) => "role_violation",
            Error::TextTooLong => "text_too_long",
        }
    }

    /// Errors that indicate a misbehaving client rather than a race.
    pub fn is_protocol_violation(&self) -> bool {
        matches!(
            self,
            Error::Signal(SignalError::IllegalTransition { .. } | SignalError::RoleViolation(_))
                | Error::RoleViolation(_)
        )
    }
}
