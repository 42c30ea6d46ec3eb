//! One tick of the rig, shared by headless and live sessions: observe,
//! arbitrate, detect the intervention edge, snapshot, buffer, step.

use super::config::{PerceptionSource, SessionConfig};
use crate::agents::Hud;
use crate::arbitration::{arbitrate, ControlCommand, InterventionCause, InterventionEvent};
use crate::capture::{CaptureError, CornerCaseRecord, FrameRecord, RollingBuffer};
use crate::eval::{CampaignLog, LoggedEvent};
use crate::grid::{AppearanceGrid, SemanticGrid};
use crate::perception::{degrade, predict, DegradationParams, PerceiverModel, PerceptionError};
use crate::seed::mix;
use crate::world::{ms_to_kmh, WorldError, WorldState, DEFAULT_DT};
use std::fs;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RigError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("{0}")]
    Io(String),
}

/// The semantic driver's eyes.
#[derive(Debug, Clone, PartialEq)]
pub enum Perceiver {
    /// Corruption is redrawn every `coherence_ticks`, so a missed object
    /// stays missed for a while instead of flickering.
    Channel { params: DegradationParams, coherence_ticks: u64 },
    Model(PerceiverModel),
}

impl Perceiver {
    pub fn channel(params: DegradationParams) -> Self {
        Perceiver::Channel { params, coherence_ticks: 1 }
    }

    pub fn from_source(source: &PerceptionSource, coherence_ticks: u64) -> Result<Self, RigError> {
        match source {
            PerceptionSource::Channel(p) => Ok(Perceiver::Channel { params: p.clone(), coherence_ticks: coherence_ticks.max(1) }),
            PerceptionSource::Model(path) => {
                let bytes = fs::read(path).map_err(|e| RigError::Io(format!("{}: {e}", path.display())))?;
                Ok(Perceiver::Model(PerceiverModel::from_bytes(&bytes)?))
            }
        }
    }

    pub fn perceive(&self, truth: &SemanticGrid, appearance: &AppearanceGrid, tick: u64) -> SemanticGrid {
        match self {
            Perceiver::Channel { params, coherence_ticks } => degrade(truth, &params.with_seed(mix(params.seed, tick / coherence_ticks))),
            Perceiver::Model(m) => predict(m, appearance),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub tick: u64,
    pub timestamp: f64,
    pub truth: SemanticGrid,
    pub appearance: AppearanceGrid,
    pub predicted: SemanticGrid,
    pub hud: Hud,
}

/// Rising-edge detector with a quiet-time re-arm.
#[derive(Debug, Clone)]
pub struct InterventionDetector {
    cooldown_ticks: u64,
    armed: bool,
    quiet: u64,
}

impl InterventionDetector {
    pub fn new(cooldown_ticks: u64) -> Self {
        Self { cooldown_ticks, armed: true, quiet: 0 }
    }

    /// True on the first tick of an episode, once the safety input has been
    /// idle for `cooldown_ticks` since the previous episode.
    pub fn update(&mut self, intervening: bool) -> bool {
        if intervening {
            self.quiet = 0;
            let fire = self.armed;
            self.armed = false;
            fire
        } else {
            self.quiet += 1;
            if self.quiet >= self.cooldown_ticks {
                self.armed = true;
            }
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub event: InterventionEvent,
    /// `None` when the buffer did not yet hold a full clip.
    pub record: Option<CornerCaseRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub effective: ControlCommand,
    pub intervening: bool,
    pub capture: Option<Capture>,
}

pub struct Rig {
    pub world: WorldState,
    pub perceiver: Perceiver,
    pub log: CampaignLog,
    buffer: RollingBuffer,
    detector: InterventionDetector,
    deadband: f64,
    fps: u32,
    prefix: String,
    captured: usize,
    uncaptured: usize,
    colliding: bool,
}

impl Rig {
    pub fn new(cfg: &SessionConfig, perceiver: Perceiver) -> Result<Self, RigError> {
        Ok(Self {
            world: WorldState::init(cfg.world.clone())?,
            perceiver,
            log: CampaignLog { events: Vec::new(), distance_km: 0.0, time_min: 0.0, collisions: 0, ticks: 0 },
            buffer: RollingBuffer::new(cfg.capture.capacity()),
            detector: InterventionDetector::new(cfg.cooldown_ticks()),
            deadband: cfg.deadband,
            fps: cfg.capture.fps,
            prefix: cfg.record_prefix.clone(),
            captured: 0,
            uncaptured: 0,
            colliding: false,
        })
    }

    pub fn from_config(cfg: &SessionConfig) -> Result<Self, RigError> {
        Self::new(cfg, Perceiver::from_source(&cfg.perception, cfg.perception_coherence_ticks)?)
    }

    pub fn captured(&self) -> usize {
        self.captured
    }

    /// Interventions that fired before the buffer held a full clip.
    pub fn uncaptured(&self) -> usize {
        self.uncaptured
    }

    pub fn hud(&self) -> Hud {
        Hud { speed_kmh: ms_to_kmh(self.world.ego.speed), light_phase: self.world.light_ahead().map(|l| l.phase) }
    }

    pub fn observe(&self) -> Observation {
        let (truth, appearance) = self.world.render();
        let predicted = self.perceiver.perceive(&truth, &appearance, self.world.tick);
        Observation { tick: self.world.tick, timestamp: self.world.clock, truth, appearance, predicted, hud: self.hud() }
    }

    pub fn next_record_id(&self) -> String {
        format!("{}-{:04}", self.prefix, self.captured + 1)
    }

    /// Finish the tick described by `obs`. On an intervention edge the buffer
    /// is snapshot before this tick's frame is pushed, so the clip ends on
    /// the frame preceding the trigger.
    pub fn advance(&mut self, obs: Observation, semantic: ControlCommand, safety: ControlCommand, cause: InterventionCause) -> Result<TickOutcome, RigError> {
        let semantic = semantic.clamped();
        let safety = safety.clamped();
        let (effective, intervening) = arbitrate(&semantic, &safety, self.deadband);
        let mut capture = None;
        if self.detector.update(intervening) {
            let event = InterventionEvent {
                timestamp: self.world.clock,
                odometer_km: self.world.odometer_km,
                cause,
                comment: String::new(),
            };
            let ride_minutes = self.world.clock / 60.0;
            let record = match self.buffer.snapshot(self.next_record_id(), event.clone(), self.fps, ride_minutes) {
                Ok(r) => {
                    self.captured += 1;
                    Some(r)
                }
                Err(CaptureError::Underfull { .. }) => {
                    self.uncaptured += 1;
                    None
                }
                Err(e) => return Err(e.into()),
            };
            self.log.events.push(LoggedEvent {
                odometer_km: event.odometer_km,
                time_min: ride_minutes,
                cause,
                record_id: record.as_ref().map(|r| r.id.clone()),
            });
            capture = Some(Capture { event, record });
        }
        self.buffer.push(FrameRecord {
            tick_index: obs.tick,
            timestamp: obs.timestamp,
            truth: obs.truth,
            predicted: obs.predicted,
            appearance: obs.appearance,
            ego_speed_kmh: obs.hud.speed_kmh,
            effective_cmd: effective,
        })?;
        self.world.step(&effective, DEFAULT_DT)?;
        if self.world.collision && !self.colliding {
            self.log.collisions += 1;
        }
        self.colliding = self.world.collision;
        self.log.distance_km = self.world.odometer_km;
        self.log.time_min = self.world.clock / 60.0;
        self.log.ticks = self.world.tick;
        Ok(TickOutcome { effective, intervening, capture })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_fires_once_per_episode() {
        let mut d = InterventionDetector::new(3);
        let seq = [true, true, false, true, false, false, false, true, true];
        let fired: Vec<bool> = seq.iter().map(|&s| d.update(s)).collect();
        assert_eq!(fired, [true, false, false, false, false, false, false, true, false]);
    }

    #[test]
    fn snapshot_precedes_the_trigger_tick() {
        let mut rig = Rig::new(&SessionConfig::default(), Perceiver::channel(DegradationParams { quality: 1.0, ..Default::default() })).unwrap();
        for _ in 0..35 {
            let obs = rig.observe();
            let out = rig.advance(obs, ControlCommand { throttle: 0.5, ..ControlCommand::ZERO }, ControlCommand::ZERO, InterventionCause::Boredom).unwrap();
            assert!(out.capture.is_none());
        }
        let trigger = rig.world.tick;
        let obs = rig.observe();
        let out = rig.advance(obs, ControlCommand::ZERO, ControlCommand { brake: 0.8, ..ControlCommand::ZERO }, InterventionCause::Boredom).unwrap();
        assert!(out.intervening);
        let rec = out.capture.unwrap().record.unwrap();
        assert_eq!(rec.frames.len(), 30);
        assert_eq!(rec.frames.last().unwrap().tick_index, trigger - 1);
        assert_eq!(rec.id, "cc-0001");
        assert!((rec.span_seconds() - 2.9).abs() < 1e-9);
    }

    #[test]
    fn early_intervention_is_logged_but_not_captured() {
        let mut rig = Rig::new(&SessionConfig::default(), Perceiver::channel(DegradationParams::default())).unwrap();
        let obs = rig.observe();
        let out = rig.advance(obs, ControlCommand::ZERO, ControlCommand::full_brake(), InterventionCause::Boredom).unwrap();
        assert!(out.capture.unwrap().record.is_none());
        assert_eq!((rig.captured(), rig.uncaptured(), rig.log.events.len()), (0, 1, 1));
    }
}
