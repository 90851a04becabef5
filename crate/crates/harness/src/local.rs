//! A gateway inside the harness process, for runs that do not name one.

use std::path::Path;

use tempfile::TempDir;
use tutorlink_gateway::{GatewayConfig, RunningGateway};

use crate::HarnessError;

pub struct LocalGateway {
    pub gateway: RunningGateway,
    // logs live as long as the gateway
    _dir: TempDir,
}

impl LocalGateway {
    /// Starts on an ephemeral port with its log in a temporary directory.
    pub async fn start(simulated_clock: bool) -> Result<LocalGateway, HarnessError> {
        let dir = scratch_dir();
        let config = GatewayConfig {
            port: 0,
            data_dir: dir.path().to_owned(),
            simulated_clock,
            ..GatewayConfig::default()
        };
        let gateway = tutorlink_gateway::start(config)
            .await
            .map_err(|e| HarnessError::connection("local gateway", e))?;
        Ok(LocalGateway { gateway, _dir: dir })
    }

    pub fn addr(&self) -> String {
        self.gateway.addr().to_string()
    }

    pub async fn stop(self) {
        let _ = self.gateway.shutdown().await;
    }
}

/// A temporary directory, on tmpfs when there is one: the log syncs every
/// batch.
pub fn scratch_dir() -> TempDir {
    let shm = Path::new("/dev/shm");
    if shm.is_dir() {
        if let Ok(d) = tempfile::tempdir_in(shm) {
            return d;
        }
    }
    tempfile::tempdir().expect("temporary directory")
}
