//! Gateway settings: defaults, an optional TOML file, then command-line
//! overrides, in that order.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use tutorlink_core::alerts::AlertRuleConfig;
use tutorlink_core::avatar::{AvatarConfig, Lexicon};
use tutorlink_core::hub::HubConfig;
use tutorlink_core::quality::{QualityTier, TierTable};
use tutorlink_core::session::PresenceConfig;

pub const DEFAULT_QUEUE_LIMIT: usize = 1000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub data_dir: PathBuf,
    pub hub: HubConfig,
    /// Envelopes that may wait for one slow socket before it is dropped.
    pub queue_limit: usize,
    pub tick_interval_ms: u64,
    /// Test-only: run sessions on a manual clock and expose
    /// `POST /api/test/clock/advance`.
    pub simulated_clock: bool,
    pub simulated_start_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            data_dir: PathBuf::from("data"),
            hub: HubConfig::default(),
            queue_limit: DEFAULT_QUEUE_LIMIT,
            tick_interval_ms: 1000,
            simulated_clock: false,
            simulated_start_ms: 0,
        }
    }
}

impl GatewayConfig {
    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.hub.alerts.validate().or_else(invalid)?;
        self.hub.presence.validate().or_else(invalid)?;
        self.hub.tiers.validate().or_else(invalid)?;
        if !(self.hub.avatar.speech_rate.is_finite() && self.hub.avatar.speech_rate > 0.0) {
            return invalid("avatar.speech_rate must be positive".into());
        }
        if self.hub.avatar.attention_window_ms == 0 {
            return invalid("avatar.attention_window_ms must be positive".into());
        }
        if self.queue_limit == 0 {
            return invalid("queue_limit must be positive".into());
        }
        if self.tick_interval_ms == 0 {
            return invalid("tick_interval_ms must be positive".into());
        }
        Ok(())
    }

    /// Loads a config file on top of the defaults. Relative paths inside the
    /// file resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<GatewayConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let file: FileConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = GatewayConfig::default();
        file.apply(&mut config, base)?;
        Ok(config)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    bind: Option<IpAddr>,
    port: Option<u16>,
    data_dir: Option<PathBuf>,
    bandwidth_budget_kbps: Option<u64>,
    ice_servers: Option<Vec<String>>,
    queue_limit: Option<usize>,
    tick_interval_ms: Option<u64>,
    alerts: Option<AlertsFile>,
    presence: Option<PresenceFile>,
    tiers: Option<TiersFile>,
    avatar: Option<AvatarFile>,
    testing: Option<TestingFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlertsFile {
    inactivity_secs: Option<u64>,
    incorrect_threshold: Option<u32>,
    incorrect_window_secs: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresenceFile {
    heartbeat_interval_ms: Option<u64>,
    stale_after_ms: Option<u64>,
    disconnect_after_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TiersFile {
    high: Option<QualityTier>,
    mid: Option<QualityTier>,
    low: Option<QualityTier>,
    frozen: Option<QualityTier>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AvatarFile {
    speech_rate: Option<f64>,
    attention_window_ms: Option<u64>,
    /// Separate TOML file with `canned_prompts` and a `[lexicon]` table.
    prompts_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptsFile {
    canned_prompts: Option<Vec<String>>,
    lexicon: Option<Lexicon>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestingFile {
    simulated_clock: Option<bool>,
    start_ms: Option<u64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl FileConfig {
    fn apply(self, c: &mut GatewayConfig, base: &Path) -> Result<(), ConfigError> {
        set(&mut c.bind, self.bind);
        set(&mut c.port, self.port);
        set(&mut c.data_dir, self.data_dir.map(|d| base.join(d)));
        set(&mut c.hub.budget_kbps, self.bandwidth_budget_kbps);
        set(&mut c.hub.ice_servers, self.ice_servers);
        set(&mut c.queue_limit, self.queue_limit);
        set(&mut c.tick_interval_ms, self.tick_interval_ms);
        if let Some(a) = self.alerts {
            let r: &mut AlertRuleConfig = &mut c.hub.alerts;
            set(&mut r.inactivity_secs, a.inactivity_secs);
            set(&mut r.incorrect_threshold, a.incorrect_threshold);
            set(&mut r.incorrect_window_secs, a.incorrect_window_secs);
        }
        if let Some(p) = self.presence {
            let r: &mut PresenceConfig = &mut c.hub.presence;
            set(&mut r.heartbeat_interval_ms, p.heartbeat_interval_ms);
            set(&mut r.stale_after_ms, p.stale_after_ms);
            set(&mut r.disconnect_after_ms, p.disconnect_after_ms);
        }
        if let Some(t) = self.tiers {
            let r: &mut TierTable = &mut c.hub.tiers;
            set(&mut r.high, t.high);
            set(&mut r.mid, t.mid);
            set(&mut r.low, t.low);
            set(&mut r.frozen, t.frozen);
        }
        if let Some(a) = self.avatar {
            let r: &mut AvatarConfig = &mut c.hub.avatar;
            set(&mut r.speech_rate, a.speech_rate);
            set(&mut r.attention_window_ms, a.attention_window_ms);
            if let Some(path) = a.prompts_file {
                let path = base.join(path);
                let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                let prompts: PromptsFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                set(&mut r.canned_prompts, prompts.canned_prompts);
                set(&mut r.lexicon, prompts.lexicon);
            }
        }
        if let Some(t) = self.testing {
            set(&mut c.simulated_clock, t.simulated_clock);
            set(&mut c.simulated_start_ms, t.start_ms);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_are_valid() {
        let c = GatewayConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hub.alerts.inactivity_secs, 120);
        assert_eq!(c.hub.alerts.incorrect_threshold, 3);
        assert_eq!(c.hub.alerts.incorrect_window_secs, 300);
        assert_eq!(c.hub.budget_kbps, 4000);
        assert_eq!(c.queue_limit, 1000);
    }

    #[test]
    fn file_values_and_tier_table() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "prompts.toml",
            "canned_prompts = [\"Keep going!\"]\n[lexicon]\ngreeting = [\"yo\"]\nencouragement = []\ncorrective = []\n",
        );
        let p = write(
            dir.path(),
            "gw.toml",
            r#"
port = 9000
data_dir = "logs"
bandwidth_budget_kbps = 2500

[alerts]
inactivity_secs = 60

[tiers.high]
width = 1920
height = 1080
kbps = 2500

[avatar]
prompts_file = "prompts.toml"

[testing]
simulated_clock = true
"#,
        );
        let c = GatewayConfig::from_file(&p).unwrap();
        assert_eq!(c.port, 9000);
        assert_eq!(c.data_dir, dir.path().join("logs"));
        assert_eq!(c.hub.budget_kbps, 2500);
        assert_eq!(c.hub.alerts.inactivity_secs, 60);
        assert_eq!(c.hub.alerts.incorrect_threshold, 3);
        assert_eq!(c.hub.tiers.high.kbps, 2500);
        assert_eq!(c.hub.tiers.mid, TierTable::default().mid);
        assert_eq!(c.hub.avatar.canned_prompts, vec!["Keep going!".to_string()]);
        assert_eq!(c.hub.avatar.lexicon.greeting, vec!["yo".to_string()]);
        assert!(c.simulated_clock);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.toml", "prot = 1\n");
        assert!(matches!(GatewayConfig::from_file(&p), Err(ConfigError::Parse { .. })));
        let p = write(dir.path(), "b.toml", "port = 70000\n");
        assert!(matches!(GatewayConfig::from_file(&p), Err(ConfigError::Parse { .. })));
        let p = write(dir.path(), "c.toml", "[alerts]\ninactivity_secs = 0\n");
        let c = GatewayConfig::from_file(&p).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
        assert!(matches!(
            GatewayConfig::from_file(&dir.path().join("missing.toml")),
            Err(ConfigError::Read { .. })
        ));
    }
}
