//! The one config document every subcommand reads. Every field has a default,
//! so `{}` is a valid config.

use crate::agents::{SafetyPolicyParams, SemanticPolicyParams};
use crate::arbitration::DEFAULT_DEADBAND;
use crate::capture::{CAPTURE_FPS, CAPTURE_SECONDS};
use crate::experiment::ExperimentConfig;
use crate::perception::{DegradationParams, TrainConfig};
use crate::world::{WorldConfig, DEFAULT_DT};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATA_DIR_ENV: &str = "AEYE_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "aeye-data";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("config field {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Headless,
    Live,
    Replay,
}

/// Where the semantic driver's view comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionSource {
    Channel(DegradationParams),
    /// Path to a model blob written by `train`.
    Model(PathBuf),
}

impl Default for PerceptionSource {
    fn default() -> Self {
        PerceptionSource::Channel(DegradationParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureSettings {
    pub fps: u32,
    pub seconds: u32,
}

impl Default for CaptureSettings {
    fn default() -> Self {
        Self { fps: CAPTURE_FPS, seconds: CAPTURE_SECONDS }
    }
}

impl CaptureSettings {
    pub fn capacity(&self) -> usize {
        (self.fps * self.seconds) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StopCondition {
    pub max_km: Option<f64>,
    pub max_minutes: Option<f64>,
    pub max_cc: Option<usize>,
}

impl StopCondition {
    pub fn km(km: f64) -> Self {
        Self { max_km: Some(km), ..Self::default() }
    }

    pub fn cc(n: usize) -> Self {
        Self { max_cc: Some(n), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_km.is_none() && self.max_minutes.is_none() && self.max_cc.is_none() {
            return Err(invalid("stop", "set at least one of max_km, max_minutes, max_cc"));
        }
        if self.max_km.is_some_and(|k| !(k > 0.0 && k.is_finite())) {
            return Err(invalid("stop.max_km", "must be positive"));
        }
        if self.max_minutes.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
            return Err(invalid("stop.max_minutes", "must be positive"));
        }
        if self.max_cc == Some(0) {
            return Err(invalid("stop.max_cc", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub mode: SessionMode,
    pub world: WorldConfig,
    pub perception: PerceptionSource,
    /// Ticks between fresh draws of the degradation channel's randomness.
    pub perception_coherence_ticks: u64,
    pub semantic_policy: SemanticPolicyParams,
    pub safety_policy: SafetyPolicyParams,
    pub deadband: f64,
    pub capture: CaptureSettings,
    /// Quiet time inside the deadband before another intervention can fire.
    pub cooldown_seconds: f64,
    pub stop: StopCondition,
    pub record_prefix: String,
    /// Hard ceiling on simulated ticks for any headless run.
    pub max_ticks: u64,
    pub listen: String,
    /// Wall-clock milliseconds per tick in live mode.
    pub tick_ms: u64,
    /// Live inputs are held this long after the last message, then zeroed.
    pub input_hold_seconds: f64,
    /// Directory of browser assets served by `serve`.
    pub static_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            mode: SessionMode::Headless,
            world: WorldConfig::default(),
            perception: PerceptionSource::default(),
            perception_coherence_ticks: 10,
            semantic_policy: SemanticPolicyParams::default(),
            safety_policy: SafetyPolicyParams::default(),
            deadband: DEFAULT_DEADBAND,
            capture: CaptureSettings::default(),
            cooldown_seconds: 1.0,
            stop: StopCondition::km(5.0),
            record_prefix: "cc".into(),
            max_ticks: 2_000_000,
            listen: "127.0.0.1:8765".into(),
            tick_ms: 100,
            input_hold_seconds: 0.5,
            static_dir: None,
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Apply a seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        if let PerceptionSource::Channel(p) = &mut self.perception {
            p.seed = seed;
        }
        self.train.seed = seed;
        self.experiment.seed = seed;
        self
    }

    pub fn ticks_per_second(&self) -> u32 {
        (1.0 / DEFAULT_DT).round() as u32
    }

    pub fn cooldown_ticks(&self) -> u64 {
        (self.cooldown_seconds / DEFAULT_DT).round() as u64
    }

    pub fn input_hold_ticks(&self) -> u64 {
        (self.input_hold_seconds / DEFAULT_DT).round() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.world.validate().map_err(|e| match e {
            crate::world::WorldError::Config { field, reason } => invalid(&format!("world.{field}"), reason),
            other => invalid("world", other),
        })?;
        match &self.perception {
            PerceptionSource::Channel(p) => p.validate().map_err(|e| invalid("perception.channel", e))?,
            PerceptionSource::Model(path) if path.as_os_str().is_empty() => return Err(invalid("perception.model", "empty path")),
            PerceptionSource::Model(_) => {}
        }
        if self.perception_coherence_ticks == 0 {
            return Err(invalid("perception_coherence_ticks", "must be >= 1"));
        }
        self.semantic_policy.validate(&self.world.view).map_err(|e| invalid("semantic_policy", e))?;
        self.safety_policy.validate().map_err(|e| invalid("safety_policy", e))?;
        if !(0.0..=0.2).contains(&self.deadband) {
            return Err(invalid("deadband", "must lie in [0, 0.2]"));
        }
        if self.capture.fps != self.ticks_per_second() {
            return Err(invalid("capture.fps", format!("must equal the simulation rate of {} Hz", self.ticks_per_second())));
        }
        if self.capture.capacity() == 0 {
            return Err(invalid("capture.seconds", "buffer would be empty"));
        }
        if !(self.cooldown_seconds >= 0.0 && self.cooldown_seconds.is_finite()) {
            return Err(invalid("cooldown_seconds", "must be >= 0"));
        }
        self.stop.validate()?;
        if self.record_prefix.is_empty() || !self.record_prefix.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(invalid("record_prefix", "use ascii letters, digits, '-' or '_'"));
        }
        if self.tick_ms == 0 {
            return Err(invalid("tick_ms", "must be >= 1"));
        }
        if !(self.input_hold_seconds >= 0.0 && self.input_hold_seconds.is_finite()) {
            return Err(invalid("input_hold_seconds", "must be >= 0"));
        }
        self.train.validate().map_err(|e| invalid("train", e))?;
        self.experiment.validate().map_err(|e| invalid("experiment", e))?;
        Ok(())
    }
}

/// `AEYE_DATA_DIR` if set, otherwise `./aeye-data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}
