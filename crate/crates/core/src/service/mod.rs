//! Session orchestration: the shared tick loop, headless campaigns, live
//! two-driver sessions, replay and the wire protocol.

pub mod campaign;
pub mod config;
pub mod live;
pub mod rig;
pub mod server;
pub mod wire;

pub use campaign::{run_headless_campaign, CampaignOutput};
pub use config::{ConfigError, PerceptionSource, SessionConfig, SessionMode, StopCondition};
pub use rig::{InterventionDetector, Observation, Perceiver, Rig, RigError, TickOutcome};
