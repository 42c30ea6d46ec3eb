//! Merging the two drivers' commands. The safety driver always wins once any
//! of their inputs leaves the deadband.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_DEADBAND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid control command: {0}")]
pub struct CommandError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    /// [-1, 1], positive steers left.
    pub steer: f64,
    /// [0, 1]
    pub throttle: f64,
    /// [0, 1]
    pub brake: f64,
}

impl ControlCommand {
    pub const ZERO: ControlCommand = ControlCommand { steer: 0.0, throttle: 0.0, brake: 0.0 };

    pub fn full_brake() -> Self {
        Self { brake: 1.0, ..Self::ZERO }
    }

    pub fn validate(&self) -> Result<(), CommandError> {
        let fields = [("steer", self.steer, -1.0), ("throttle", self.throttle, 0.0), ("brake", self.brake, 0.0)];
        for (name, v, lo) in fields {
            if !v.is_finite() {
                return Err(CommandError(format!("{name} is not finite")));
            }
            if v < lo || v > 1.0 {
                return Err(CommandError(format!("{name} = {v} outside [{lo}, 1]")));
            }
        }
        Ok(())
    }

    /// Clamp into range; non-finite fields become zero.
    pub fn clamped(self) -> Self {
        let f = |v: f64, lo: f64| if v.is_finite() { v.clamp(lo, 1.0) } else { 0.0 };
        Self { steer: f(self.steer, -1.0), throttle: f(self.throttle, 0.0), brake: f(self.brake, 0.0) }
    }

    fn max_magnitude(&self) -> f64 {
        self.steer.abs().max(self.throttle.abs()).max(self.brake.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionCause {
    OverlookedWalker,
    OverlookedVehicle,
    TrafficRuleViolation,
    Boredom,
}

impl InterventionCause {
    pub const ALL: [InterventionCause; 4] = [
        InterventionCause::OverlookedWalker,
        InterventionCause::OverlookedVehicle,
        InterventionCause::TrafficRuleViolation,
        InterventionCause::Boredom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionCause::OverlookedWalker => "overlooked_walker",
            InterventionCause::OverlookedVehicle => "overlooked_vehicle",
            InterventionCause::TrafficRuleViolation => "traffic_rule_violation",
            InterventionCause::Boredom => "boredom",
        }
    }
}

impl fmt::Display for InterventionCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterventionCause {
    type Err = CommandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CommandError(format!("unknown intervention cause {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEvent {
    /// Simulated seconds since the start of the campaign.
    pub timestamp: f64,
    pub odometer_km: f64,
    pub cause: InterventionCause,
    #[serde(default)]
    pub comment: String,
}

/// Returns the effective command and whether the safety driver intervened.
/// Any safety field strictly beyond `deadband` in magnitude hands full control
/// to the safety command.
pub fn arbitrate(semantic: &ControlCommand, safety: &ControlCommand, deadband: f64) -> (ControlCommand, bool) {
    if safety.max_magnitude() > deadband {
        (*safety, true)
    } else {
        (*semantic, false)
    }
}
