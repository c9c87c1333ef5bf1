use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::trapctl::DoorConfig;
use crate::uplinkqueue::{LinkModel, QueueConfig};
use crate::weighing::WeighingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationConfig {
    pub weighing: WeighingConfig,
    pub system_update_period_s: u32,
    pub rfid_match_window_s: u32,
    pub dbsync_period_s: u32,
    /// Unix seconds at station time zero.
    pub epoch_s: u32,
    /// Inside humidity at or above this raises the ingress warning.
    pub humidity_warn_pct: f64,
    pub queue: QueueConfig,
    pub link: LinkModel,
    pub door: DoorConfig,
    pub queue_path: Option<PathBuf>,
    pub trapdb_path: Option<PathBuf>,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            weighing: WeighingConfig::default(),
            system_update_period_s: 600,
            rfid_match_window_s: 5,
            dbsync_period_s: 6 * 3600,
            epoch_s: 1_700_000_000,
            humidity_warn_pct: 85.0,
            queue: QueueConfig::default(),
            link: LinkModel::default(),
            door: DoorConfig::default(),
            queue_path: None,
            trapdb_path: None,
        }
    }
}

impl StationConfig {
    pub fn station_id(&self) -> u16 {
        self.weighing.station_id
    }

    pub fn rfid_window_ms(&self) -> i64 {
        self.rfid_match_window_s as i64 * 1000
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.weighing;
        let positive = [
            ("entrance_grams", w.entrance_grams),
            ("stability_delta_grams", w.stability_delta_grams),
            ("stability_seconds", w.stability_seconds),
            ("window_seconds", w.window_seconds),
            ("pairing_tolerance_grams", w.pairing_tolerance_grams),
            ("sample_rate_hz", w.sample_rate_hz as f64),
            ("system_update_period_s", self.system_update_period_s as f64),
            ("rfid_match_window_s", self.rfid_match_window_s as f64),
            ("dbsync_period_s", self.dbsync_period_s as f64),
            ("humidity_warn_pct", self.humidity_warn_pct),
            ("ack_timeout_s", self.queue.ack_timeout_ms as f64),
            ("backoff_base_s", self.queue.backoff_base_ms as f64),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.queue.backoff_cap_ms < self.queue.backoff_base_ms {
            return Err(ConfigError::Invalid("backoff_cap_s below backoff_base_s".into()));
        }
        if self.queue.duty_cycle_gap_ms < 0 {
            return Err(ConfigError::Invalid("duty_cycle_gap_ms must not be negative".into()));
        }
        self.link.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = StationConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Parse { line: n, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! num {
                () => {
                    value.parse().map_err(|e| err(format!("{key}: {e}")))?
                };
            }
            let secs_ms = |v: f64| (v * 1000.0).round() as i64;
            match key {
                "station_id" => c.weighing.station_id = num!(),
                "sample_rate_hz" => c.weighing.sample_rate_hz = num!(),
                "entrance_grams" => c.weighing.entrance_grams = num!(),
                "stability_delta_grams" => c.weighing.stability_delta_grams = num!(),
                "stability_seconds" => c.weighing.stability_seconds = num!(),
                "window_seconds" => c.weighing.window_seconds = num!(),
                "pairing_tolerance_grams" => c.weighing.pairing_tolerance_grams = num!(),
                "settle_seconds" => c.weighing.settle_seconds = num!(),
                "system_update_period_s" => c.system_update_period_s = num!(),
                "rfid_match_window_s" => c.rfid_match_window_s = num!(),
                "dbsync_period_s" => c.dbsync_period_s = num!(),
                "epoch_s" => c.epoch_s = num!(),
                "humidity_warn_pct" => c.humidity_warn_pct = num!(),
                "ack_timeout_s" => c.queue.ack_timeout_ms = secs_ms(num!()),
                "backoff_base_s" => c.queue.backoff_base_ms = secs_ms(num!()),
                "backoff_cap_s" => c.queue.backoff_cap_ms = secs_ms(num!()),
                "max_attempts" => {
                    let v: u32 = num!();
                    c.queue.max_attempts = (v > 0).then_some(v);
                }
                "duty_cycle_gap_ms" => c.queue.duty_cycle_gap_ms = num!(),
                "link_uplink_drop" => c.link.uplink_drop = num!(),
                "link_ack_drop" => c.link.ack_drop = num!(),
                "link_latency_ms" => c.link.latency_ms = num!(),
                "door_steps_per_rev" => c.door.steps_per_rev = num!(),
                "door_travel_steps" => c.door.travel_steps = num!(),
                "door_step_rate_hz" => c.door.step_rate_hz = num!(),
                "queue_path" => c.queue_path = Some(PathBuf::from(value)),
                "trapdb_path" => c.trapdb_path = Some(PathBuf::from(value)),
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
