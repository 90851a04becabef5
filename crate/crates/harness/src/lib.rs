//! Synthetic clients for the gateway: scripted scenarios with assertions,
//! a many-student load run, and a crash test for the event log.
//!
//! Everything talks to the gateway through its public HTTP and WebSocket
//! interfaces. `local` starts an in-process gateway for runs that do not
//! name one.

pub mod client;
pub mod load;
pub mod local;
pub mod runner;
pub mod scenario;
pub mod stats;
pub mod torture;

use thiserror::Error;

pub use client::{Api, Client, ClientOptions, Observed};
pub use load::{load_run, LoadConfig, LoadReport};
pub use runner::{run_scenario, AssertionResult, ScenarioReport};
pub use scenario::{Scenario, ScenarioParseError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot reach {target}: {reason}")]
    ConnectionFailure { target: String, reason: String },
    #[error(transparent)]
    ScenarioParse(#[from] ScenarioParseError),
    /// The gateway answered, but not the way the run needs.
    #[error("gateway refused {what}: {reason}")]
    Refused { what: String, reason: String },
}

impl HarnessError {
    pub(crate) fn connection(target: impl Into<String>, reason: impl ToString) -> Self {
        HarnessError::ConnectionFailure {
            target: target.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn refused(what: impl Into<String>, reason: impl ToString) -> Self {
        HarnessError::Refused {
            what: what.into(),
            reason: reason.to_string(),
        }
    }
}
