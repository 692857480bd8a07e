//! Versioned run configuration.
//!
//! A run config is a single JSON document with a `version` field; unknown
//! keys are rejected everywhere so typos fail loudly. Every section other
//! than `version` has defaults matching the reference cluster and workload,
//! so `{"version": 1}` is a complete 30-day baseline run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capping::ControllerConfig;
use crate::cluster::Topology;
use crate::power::ServerPowerSpec;
use crate::predict::NoisyOracleConfig;
use crate::scheduler::SchedulerConfig;
use crate::sim::signal::SignalConfig;
use crate::sim::trace::TraceSpec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config version {0} is not supported (expected {CONFIG_VERSION})")]
    UnsupportedVersion(u32),
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Default for Topology {
    fn default() -> Self {
        Topology::reference()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub idle_w: f64,
    pub peak_w: f64,
    /// Measured draw at full utilization and half frequency; calibrates the
    /// frequency exponent.
    pub half_freq_peak_w: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            idle_w: 112.0,
            peak_w: 310.0,
            half_freq_peak_w: 169.0,
        }
    }
}

impl PowerConfig {
    pub fn spec(&self, cores_per_blade: u32) -> ServerPowerSpec {
        ServerPowerSpec::calibrated(
            self.idle_w,
            self.peak_w,
            cores_per_blade as usize,
            self.half_freq_peak_w,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// `oracle`, `noisy_oracle`, or `history_frequency`.
    pub provider: String,
    pub min_confidence: f64,
    pub noisy: NoisyOracleConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            provider: "noisy_oracle".into(),
            min_confidence: 0.6,
            noisy: NoisyOracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CappingRunConfig {
    pub chassis_budget_w: f64,
    #[serde(default = "default_alert_fraction")]
    pub alert_threshold_fraction: f64,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_ms: u64,
    #[serde(default)]
    pub controller: ControllerConfig,
}

fn default_alert_fraction() -> f64 {
    0.98
}

fn default_poll_interval() -> u64 {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Chassis draws are recorded once per this interval.
    pub draw_interval_s: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { draw_interval_s: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub metrics_json: String,
    pub events_csv: Option<String>,
    pub events_json: Option<String>,
    pub draws_csv: Option<String>,
    /// Per-tick chassis power trace; large, off unless requested.
    pub power_ticks_csv: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            metrics_json: "metrics.json".into(),
            events_csv: Some("capping_events.csv".into()),
            events_json: Some("capping_events.json".into()),
            draws_csv: Some("draws.csv".into()),
            power_ticks_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon_days")]
    pub horizon_days: f64,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub trace: TraceSpec,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub power: PowerConfig,
    #[serde(default)]
    pub capping: Option<CappingRunConfig>,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub signal: SignalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_horizon_days() -> f64 {
    30.0
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str(r#"{"version": 1}"#).expect("minimal config parses")
    }
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::UnsupportedVersion(self.version));
        }
        if !(0.0..=1.0).contains(&self.scheduler.alpha) {
            return Err(ConfigError::Invalid(format!(
                "scheduler.alpha {} outside [0, 1]",
                self.scheduler.alpha
            )));
        }
        if self.horizon_days <= 0.0 {
            return Err(ConfigError::Invalid("horizon_days must be positive".into()));
        }
        self.trace
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(capping) = &self.capping {
            if capping.chassis_budget_w <= 0.0 {
                return Err(ConfigError::Invalid("chassis_budget_w must be positive".into()));
            }
            if capping.poll_interval_ms == 0 {
                return Err(ConfigError::Invalid("poll_interval_ms must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn power_spec(&self) -> ServerPowerSpec {
        self.power.spec(self.topology.cores_per_blade)
    }

    /// Stable fingerprint of the full configuration (FNV-1a over the
    /// canonical JSON encoding).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_reference_defaults() {
        let config = RunConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(config.topology.racks, 20);
        assert_eq!(config.scheduler.alpha, 0.8);
        assert_eq!(config.horizon_days, 30.0);
        assert!(config.capping.is_none());
        assert_eq!(config.power.idle_w, 112.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"version": 1, "sceduler": {}}"#).unwrap_err();
        assert!(err.to_string().contains("sceduler"), "{err}");
        let nested = RunConfig::from_json(r#"{"version": 1, "scheduler": {"alpa": 0.5}}"#);
        assert!(nested.is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let err = RunConfig::from_json(r#"{"version": 2}"#).unwrap_err();
        assert!(matches!(err, ConfigError::UnsupportedVersion(2)));
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let err =
            RunConfig::from_json(r#"{"version": 1, "scheduler": {"alpha": 1.5}}"#).unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::from_json(r#"{"version": 1, "seed": 5}"#).unwrap();
        let b = RunConfig::from_json(r#"{"version": 1, "seed": 5}"#).unwrap();
        let c = RunConfig::from_json(r#"{"version": 1, "seed": 6}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn config_json_round_trips() {
        let config = RunConfig::from_json(
            r#"{"version": 1, "capping": {"chassis_budget_w": 2450.0}, "sampling": {}}"#,
        )
        .unwrap();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(config, back);
    }
}
