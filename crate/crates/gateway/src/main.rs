use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use tutorlink_gateway::{serve, GatewayConfig};

/// Tutoring session gateway.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// TOML config file; flags given here override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bind: Option<IpAddr>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Seconds without activity before a student is flagged [default: 120]
    #[arg(long)]
    inactivity_secs: Option<u64>,
    /// Incorrect answers that raise an alert [default: 3]
    #[arg(long)]
    incorrect_threshold: Option<u32>,
    /// Window for counting incorrect answers, in seconds [default: 300]
    #[arg(long)]
    incorrect_window_secs: Option<u64>,
    /// Total screen-share budget across all feeds [default: 4000]
    #[arg(long)]
    bandwidth_budget_kbps: Option<u64>,
}

impl Args {
    fn into_config(self) -> Result<GatewayConfig, tutorlink_gateway::ConfigError> {
        let mut c = match &self.config {
            Some(path) => GatewayConfig::from_file(path)?,
            None => GatewayConfig::default(),
        };
        if let Some(v) = self.bind {
            c.bind = v;
        }
        if let Some(v) = self.port {
            c.port = v;
        }
        if let Some(v) = self.data_dir {
            c.data_dir = v;
        }
        if let Some(v) = self.inactivity_secs {
            c.hub.alerts.inactivity_secs = v;
        }
        if let Some(v) = self.incorrect_threshold {
            c.hub.alerts.incorrect_threshold = v;
        }
        if let Some(v) = self.incorrect_window_secs {
            c.hub.alerts.incorrect_window_secs = v;
        }
        if let Some(v) = self.bandwidth_budget_kbps {
            c.hub.budget_kbps = v;
        }
        c.validate()?;
        Ok(c)
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let config = match Args::parse().into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gateway: {e}");
            return ExitCode::from(2);
        }
    };
    match serve(config, shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gateway: {e}");
            ExitCode::FAILURE
        }
    }
}
