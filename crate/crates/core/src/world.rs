//! Deterministic 2D driving world.
//!
//! The map is a straight two-lane road running along +x that wraps around
//! after `map_extent` meters. The ego vehicle drives in the right lane
//! (`y = -LANE_OFFSET`), oncoming traffic uses the left lane, walkers roam
//! the sidewalks and cross the carriageway wherever their plan says so.
//! Traffic lights stand on the ego-side sidewalk with the stop line at the
//! pole.
//!
//! Rendering produces an ego-centric forward grid. Rows are linear distance
//! bins; columns are lateral bins whose physical width grows with distance
//! beyond a near field, so far objects cover fewer cells, as in a camera.

use crate::arbitration::ControlCommand;
use crate::grid::{AppearanceGrid, ClassId, SemanticGrid, NUM_CLASSES};
use crate::seed::{mix, mix3, rng, stream};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const ROAD_HALF_WIDTH: f64 = 3.5;
pub const LANE_OFFSET: f64 = 1.75;
pub const SIDEWALK_OUTER: f64 = 5.5;
pub const SCENERY_OUTER: f64 = 25.0;
pub const SCENERY_BLOCK: f64 = 15.0;

pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.8;
pub const WHEELBASE: f64 = 2.5;
pub const MAX_STEER_RAD: f64 = 0.5;
pub const MAX_ACCEL: f64 = 3.0;
pub const MAX_DECEL: f64 = 8.0;

pub const WALKER_SIZE: f64 = 0.6;
pub const WALKER_SIDEWALK_Y: f64 = 4.5;
pub const LIGHT_POLE_SIZE: f64 = 0.5;
pub const LIGHT_POLE_Y: f64 = -4.5;

pub const GREEN_SECONDS: f64 = 10.0;
pub const YELLOW_SECONDS: f64 = 3.0;
pub const RED_SECONDS: f64 = 7.0;

/// Simulation tick; one capture frame per tick at 10 fps.
pub const DEFAULT_DT: f64 = 0.1;

const WALK_CROSS_PROB: f64 = 0.45;
const NPC_ACCEL: f64 = 2.0;
const NPC_DECEL: f64 = 6.0;
const NPC_MIN_GAP: f64 = 6.0;

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / 3.6
}

pub fn ms_to_kmh(ms: f64) -> f64 {
    ms * 3.6
}

/// Appearance palette: the mean colour each class renders with before
/// brightness scaling and noise.
pub const APPEARANCE_PALETTE: [[f32; 3]; NUM_CLASSES] = [
    [0.55, 0.70, 0.90], // void (sky/backdrop)
    [0.40, 0.40, 0.42], // road
    [0.62, 0.60, 0.56], // sidewalk
    [0.58, 0.36, 0.30], // building
    [0.28, 0.46, 0.22], // vegetation
    [0.22, 0.26, 0.52], // vehicle
    [0.50, 0.36, 0.40], // pedestrian
    [0.74, 0.66, 0.18], // traffic light
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Forward range covered by the grid.
    pub range_m: f64,
    pub fov_deg: f64,
    /// Below this distance the lateral span stays constant.
    pub near_field_m: f64,
}

impl Default for ViewGeometry {
    fn default() -> Self {
        Self { rows: 64, cols: 64, range_m: 50.0, fov_deg: 60.0, near_field_m: 10.0 }
    }
}

impl ViewGeometry {
    pub fn row_depth(&self) -> f64 {
        self.range_m / self.rows as f64
    }

    /// Distance of the centre of row `r`: `(r + 0.5) * range / rows`.
    pub fn row_distance(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.row_depth()
    }

    pub fn half_width(&self, distance: f64) -> f64 {
        distance.max(self.near_field_m) * (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Lateral offset (left positive) of the centre of cell `(row, col)`.
    pub fn lateral(&self, row: usize, col: usize) -> f64 {
        let hw = self.half_width(self.row_distance(row));
        (1.0 - 2.0 * (col as f64 + 0.5) / self.cols as f64) * hw
    }

    /// Rows whose depth interval overlaps `[x0, x1]` (forward meters).
    pub fn row_span(&self, x0: f64, x1: f64) -> Option<(usize, usize)> {
        if x1 <= 0.0 || x0 >= self.range_m || x1 <= x0 {
            return None;
        }
        let rd = self.row_depth();
        let lo = (x0.max(0.0) / rd).floor() as usize;
        let hi = ((x1 / rd).ceil() as usize).saturating_sub(1).min(self.rows - 1);
        (lo <= hi).then_some((lo, hi))
    }

    /// Columns of row `row` whose lateral interval overlaps `[y0, y1]`.
    pub fn col_span(&self, row: usize, y0: f64, y1: f64) -> Option<(usize, usize)> {
        let hw = self.half_width(self.row_distance(row));
        let half = self.cols as f64 / 2.0;
        let lo = ((1.0 - y1 / hw) * half).floor();
        let hi = ((1.0 - y0 / hw) * half).ceil() - 1.0;
        let lo = lo.max(0.0);
        let hi = hi.min(self.cols as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    fn validate(&self) -> Result<(), WorldError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(cfg_err("view", "rows and cols must be >= 1"));
        }
        if !(self.range_m > 0.0) || !(self.near_field_m >= 0.0) {
            return Err(cfg_err("view", "range_m must be > 0 and near_field_m >= 0"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(cfg_err("view", "fov_deg must lie in (0, 180)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpcRange {
    pub min: u32,
    pub max: u32,
}

impl Default for NpcRange {
    fn default() -> Self {
        Self { min: 8, max: 24 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    /// Length of the wrap-around road, meters.
    pub map_extent: f64,
    pub npc_vehicles: u32,
    pub npc_walkers: u32,
    pub npc_range: NpcRange,
    pub clouds: f64,
    pub wind: f64,
    pub sun_altitude: f64,
    pub speed_limit: f64,
    /// Appearance noise standard deviation before weather modulation.
    pub noise_sigma: f64,
    pub light_spacing: f64,
    pub offroad_collision: bool,
    pub view: ViewGeometry,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            map_extent: 400.0,
            npc_vehicles: 6,
            npc_walkers: 12,
            npc_range: NpcRange::default(),
            clouds: 10.0,
            wind: 10.0,
            sun_altitude: 60.0,
            speed_limit: 50.0,
            noise_sigma: 0.05,
            light_spacing: 100.0,
            offroad_collision: true,
            view: ViewGeometry::default(),
        }
    }
}

fn cfg_err(field: &'static str, reason: impl Into<String>) -> WorldError {
    WorldError::Config { field, reason: reason.into() }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(0.0..=30.0).contains(&self.clouds) {
            return Err(cfg_err("clouds", format!("{} outside [0, 30]", self.clouds)));
        }
        if !(0.0..=50.0).contains(&self.wind) {
            return Err(cfg_err("wind", format!("{} outside [0, 50]", self.wind)));
        }
        if !(20.0..=90.0).contains(&self.sun_altitude) {
            return Err(cfg_err("sun_altitude", format!("{} outside [20, 90]", self.sun_altitude)));
        }
        if !(self.speed_limit > 0.0) || !self.speed_limit.is_finite() {
            return Err(cfg_err("speed_limit", "must be > 0"));
        }
        if self.npc_range.min > self.npc_range.max {
            return Err(cfg_err("npc_range", "min exceeds max"));
        }
        let total = self.npc_vehicles + self.npc_walkers;
        if total < self.npc_range.min || total > self.npc_range.max {
            return Err(cfg_err(
                "npc_walkers",
                format!(
                    "npc total {total} outside [{}, {}]",
                    self.npc_range.min, self.npc_range.max
                ),
            ));
        }
        if !(self.map_extent >= 4.0 * self.view.range_m) || !self.map_extent.is_finite() {
            return Err(cfg_err("map_extent", "must be finite and at least 4x the view range"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(cfg_err("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.light_spacing > 0.0) {
            return Err(cfg_err("light_spacing", "must be > 0"));
        }
        self.view.validate()
    }

    pub fn speed_limit_ms(&self) -> f64 {
        kmh_to_ms(self.speed_limit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// m/s
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpcKind {
    Vehicle,
    Walker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan {
    /// Follow a lane at `cruise` m/s in `direction` (+1 along x, -1 against).
    Lane { lane_y: f64, direction: f64, cruise: f64 },
    /// Walk to `target`; the next waypoint is a pure function of `(seed, leg)`.
    Walk { seed: u64, leg: u64, target: [f64; 2], pace: f64 },
    /// Hold position (scripted test actors).
    Still,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Npc {
    pub id: u32,
    pub kind: NpcKind,
    pub pose: Pose,
    pub plan: Plan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightPhase {
    Red,
    Yellow,
    Green,
}

impl LightPhase {
    fn duration(self) -> f64 {
        match self {
            LightPhase::Green => GREEN_SECONDS,
            LightPhase::Yellow => YELLOW_SECONDS,
            LightPhase::Red => RED_SECONDS,
        }
    }

    fn next(self) -> Self {
        match self {
            LightPhase::Green => LightPhase::Yellow,
            LightPhase::Yellow => LightPhase::Red,
            LightPhase::Red => LightPhase::Green,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    /// x of the pole, which is also the stop line for the ego lane.
    pub x: f64,
    pub phase: LightPhase,
    /// Seconds spent in the current phase.
    pub timer: f64,
}

impl TrafficLight {
    fn advance(&mut self, dt: f64) {
        self.timer += dt;
        while self.timer >= self.phase.duration() {
            self.timer -= self.phase.duration();
            self.phase = self.phase.next();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub config: WorldConfig,
    pub tick: u64,
    /// Simulated seconds.
    pub clock: f64,
    pub ego: Pose,
    pub odometer_km: f64,
    pub npcs: Vec<Npc>,
    pub lights: Vec<TrafficLight>,
    pub collision: bool,
}

/// Phase and distance of the next traffic light ahead, as shown on the HUD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightAhead {
    pub phase: LightPhase,
    pub distance_m: f64,
}

/// Wrap a displacement along x into `[-extent/2, extent/2)`.
pub fn wrap_delta(dx: f64, extent: f64) -> f64 {
    (dx + extent / 2.0).rem_euclid(extent) - extent / 2.0
}

fn walk_target(seed: u64, leg: u64, from: [f64; 2], extent: f64) -> [f64; 2] {
    let mut r = rng(mix3(seed, stream::WALK_PLAN, leg));
    let side = if from[1] >= 0.0 { 1.0 } else { -1.0 };
    let on_sidewalk = from[1].abs() >= ROAD_HALF_WIDTH;
    if on_sidewalk && r.random::<f64>() < WALK_CROSS_PROB {
        let x = from[0] + r.random_range(-2.0..2.0);
        let y = -side * (WALKER_SIDEWALK_Y + r.random_range(-0.6..0.6));
        [x.rem_euclid(extent), y]
    } else {
        let dir = if r.random::<bool>() { 1.0 } else { -1.0 };
        let x = from[0] + dir * r.random_range(8.0..40.0);
        let y = side * (WALKER_SIDEWALK_Y + r.random_range(-0.6..0.6));
        [x.rem_euclid(extent), y]
    }
}

/// Walkers wait at the edge of the ego's lane while the ego is close, and
/// never step into it.
fn walker_yields(from: &Pose, to: &Pose, ego: &Pose, extent: f64) -> bool {
    const BAND: f64 = 1.8;
    let ahead = wrap_delta(to.x - ego.x, extent);
    let entering = (to.y - ego.y).abs() < BAND && (from.y - ego.y).abs() >= BAND;
    if entering && ahead > -VEHICLE_LENGTH && ahead < (ego.speed * 2.5).max(8.0) {
        return true;
    }
    let ego_rect = Rect { cx: 0.0, cy: ego.y, heading: ego.heading, half_len: VEHICLE_LENGTH / 2.0 + 0.3, half_wid: VEHICLE_WIDTH / 2.0 + 0.3 };
    let me = Rect { cx: ahead, cy: to.y, heading: 0.0, half_len: WALKER_SIZE / 2.0, half_wid: WALKER_SIZE / 2.0 };
    ego_rect.overlaps(&me) && !ego_rect.overlaps(&Rect { cx: wrap_delta(from.x - ego.x, extent), cy: from.y, ..me })
}

/// Oriented rectangle used for collision tests.
#[derive(Debug, Clone, Copy)]
struct Rect {
    cx: f64,
    cy: f64,
    heading: f64,
    half_len: f64,
    half_wid: f64,
}

impl Rect {
    fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = (self.half_len, self.half_wid);
        [[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]]
            .map(|[a, b]| [self.cx + a * c - b * s, self.cy + a * s + b * c])
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Separating-axis overlap test; touching edges do not count.
    fn overlaps(&self, other: &Rect) -> bool {
        let (a, b) = (self.corners(), other.corners());
        for axis in self.axes().iter().chain(other.axes().iter()) {
            let proj = |pts: &[[f64; 2]; 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    let v = p[0] * axis[0] + p[1] * axis[1];
                    (lo.min(v), hi.max(v))
                })
            };
            let (a0, a1) = proj(&a);
            let (b0, b1) = proj(&b);
            if a1 <= b0 + 1e-12 || b1 <= a0 + 1e-12 {
                return false;
            }
        }
        true
    }
}

fn npc_rect(npc: &Npc) -> Rect {
    let (hl, hw) = match npc.kind {
        NpcKind::Vehicle => (VEHICLE_LENGTH / 2.0, VEHICLE_WIDTH / 2.0),
        NpcKind::Walker => (WALKER_SIZE / 2.0, WALKER_SIZE / 2.0),
    };
    let heading = match npc.kind {
        // walkers render and collide as axis-aligned squares
        NpcKind::Walker => 0.0,
        NpcKind::Vehicle => npc.pose.heading,
    };
    Rect { cx: npc.pose.x, cy: npc.pose.y, heading, half_len: hl, half_wid: hw }
}

impl WorldState {
    /// Build the initial world. NPC placement, light phases and walk plans are
    /// a pure function of `config.seed`.
    pub fn init(config: WorldConfig) -> Result<Self, WorldError> {
        config.validate()?;
        let mut r = rng(mix(config.seed, stream::WORLD_INIT));
        let extent = config.map_extent;
        let vmax = config.speed_limit_ms();

        let n_lights = ((extent / config.light_spacing).floor() as usize).max(1);
        let lights = (0..n_lights)
            .map(|k| {
                let phase = match r.random_range(0..3) {
                    0 => LightPhase::Red,
                    1 => LightPhase::Yellow,
                    _ => LightPhase::Green,
                };
                let timer = r.random::<f64>() * phase.duration();
                TrafficLight { x: (k as f64 + 0.5) * config.light_spacing, phase, timer }
            })
            .collect();

        let mut npcs: Vec<Npc> = Vec::new();
        let mut id = 0u32;
        for _ in 0..config.npc_vehicles {
            let direction = if r.random::<bool>() { 1.0 } else { -1.0 };
            let lane_y = -direction * LANE_OFFSET;
            let cruise = vmax * r.random_range(0.5..0.95);
            let mut x = r.random_range(0.0..extent);
            for _ in 0..64 {
                let clear_of_ego = direction < 0.0 || wrap_delta(x, extent).abs() > 40.0;
                let spaced = npcs.iter().all(|n| match n.plan {
                    Plan::Lane { lane_y: ly, .. } if ly == lane_y => {
                        wrap_delta(n.pose.x - x, extent).abs() > 15.0
                    }
                    _ => true,
                });
                if clear_of_ego && spaced {
                    break;
                }
                x = r.random_range(0.0..extent);
            }
            let heading = if direction > 0.0 { 0.0 } else { PI };
            npcs.push(Npc {
                id,
                kind: NpcKind::Vehicle,
                pose: Pose { x, y: lane_y, heading, speed: cruise * r.random_range(0.5..1.0) },
                plan: Plan::Lane { lane_y, direction, cruise },
            });
            id += 1;
        }
        for _ in 0..config.npc_walkers {
            let side = if r.random::<bool>() { 1.0 } else { -1.0 };
            let pos = [r.random_range(0.0..extent), side * (WALKER_SIDEWALK_Y + r.random_range(-0.6..0.6))];
            let seed = r.random::<u64>();
            let pace = r.random_range(1.0..1.8);
            let target = walk_target(seed, 0, pos, extent);
            npcs.push(Npc {
                id,
                kind: NpcKind::Walker,
                pose: Pose { x: pos[0], y: pos[1], heading: 0.0, speed: pace },
                plan: Plan::Walk { seed, leg: 0, target, pace },
            });
            id += 1;
        }

        Ok(Self {
            config,
            tick: 0,
            clock: 0.0,
            ego: Pose { x: 0.0, y: -LANE_OFFSET, heading: 0.0, speed: 0.0 },
            odometer_km: 0.0,
            npcs,
            lights,
            collision: false,
        })
    }

    /// Advance the world by `dt` seconds under `cmd`.
    pub fn step(&mut self, cmd: &ControlCommand, dt: f64) -> Result<(), WorldError> {
        if !(dt > 0.0 && dt <= 0.2) {
            return Err(WorldError::Input(format!("dt {dt} outside (0, 0.2]")));
        }
        cmd.validate().map_err(|e| WorldError::Input(e.to_string()))?;
        let extent = self.config.map_extent;

        for light in &mut self.lights {
            light.advance(dt);
        }

        let ego_before = self.ego;
        let snapshot: Vec<(f64, f64, Option<f64>)> = self
            .npcs
            .iter()
            .map(|n| match n.plan {
                Plan::Lane { lane_y, .. } => (n.pose.x, n.pose.speed, Some(lane_y)),
                _ => (n.pose.x, n.pose.speed, None),
            })
            .collect();
        for i in 0..self.npcs.len() {
            let plan = self.npcs[i].plan.clone();
            match plan {
                Plan::Lane { lane_y, direction, cruise } => {
                    let x = self.npcs[i].pose.x;
                    let v = self.npcs[i].pose.speed;
                    let ahead = |other_x: f64| ((other_x - x) * direction).rem_euclid(extent);
                    let mut gap = f64::INFINITY;
                    for (j, &(ox, _, ly)) in snapshot.iter().enumerate() {
                        if j != i && ly == Some(lane_y) {
                            gap = gap.min(ahead(ox) - VEHICLE_LENGTH);
                        }
                    }
                    if (ego_before.y - lane_y).abs() < VEHICLE_WIDTH {
                        gap = gap.min(ahead(ego_before.x) - VEHICLE_LENGTH);
                    }
                    let mut target = cruise.min((NPC_DECEL * (gap - NPC_MIN_GAP).max(0.0)).sqrt());
                    if direction > 0.0 {
                        if let Some(stop) = self
                            .lights
                            .iter()
                            .map(|l| (l, (l.x - x).rem_euclid(extent)))
                            .filter(|(_, d)| *d < 60.0)
                            .min_by(|a, b| a.1.total_cmp(&b.1))
                        {
                            let (light, dist) = stop;
                            let room = dist - VEHICLE_LENGTH / 2.0 - 1.0;
                            let must_stop = match light.phase {
                                LightPhase::Red => room > -1.0,
                                LightPhase::Yellow => v * v / (2.0 * 4.0) < room,
                                LightPhase::Green => false,
                            };
                            if must_stop {
                                target = target.min((2.0 * 3.0 * room.max(0.0)).sqrt());
                            }
                        }
                    }
                    let dv = (target - v).clamp(-NPC_DECEL * dt, NPC_ACCEL * dt);
                    let v = (v + dv).max(0.0);
                    let pose = &mut self.npcs[i].pose;
                    pose.speed = v;
                    pose.x = (pose.x + direction * v * dt).rem_euclid(extent);
                    pose.y = lane_y;
                }
                Plan::Walk { seed, mut leg, mut target, pace } => {
                    let before = self.npcs[i].pose;
                    let pose = &mut self.npcs[i].pose;
                    let mut budget = pace * dt;
                    // at most a couple of waypoint switches per tick
                    for _ in 0..4 {
                        let dx = wrap_delta(target[0] - pose.x, extent);
                        let dy = target[1] - pose.y;
                        let dist = dx.hypot(dy);
                        if dist > budget {
                            pose.x = (pose.x + dx / dist * budget).rem_euclid(extent);
                            pose.y += dy / dist * budget;
                            pose.heading = dy.atan2(dx);
                            break;
                        }
                        pose.x = target[0];
                        pose.y = target[1];
                        budget -= dist;
                        leg += 1;
                        target = walk_target(seed, leg, target, extent);
                    }
                    pose.speed = pace;
                    if walker_yields(&before, pose, &ego_before, extent) {
                        *pose = Pose { speed: 0.0, ..before };
                    } else {
                        self.npcs[i].plan = Plan::Walk { seed, leg, target, pace };
                    }
                }
                Plan::Still => {}
            }
        }

        let vmax = self.config.speed_limit_ms();
        let accel = cmd.throttle * MAX_ACCEL - cmd.brake * MAX_DECEL;
        let v = (self.ego.speed + accel * dt).clamp(0.0, vmax);
        let delta = cmd.steer * MAX_STEER_RAD;
        self.ego.speed = v;
        self.ego.heading = wrap_angle(self.ego.heading + v / WHEELBASE * delta.tan() * dt);
        self.ego.x = (self.ego.x + v * self.ego.heading.cos() * dt).rem_euclid(extent);
        self.ego.y = (self.ego.y + v * self.ego.heading.sin() * dt).clamp(-extent / 2.0, extent / 2.0);
        self.odometer_km += v * dt / 1000.0;
        self.tick += 1;
        self.clock += dt;
        self.collision = self.detect_collision();
        Ok(())
    }

    fn ego_rect(&self) -> Rect {
        Rect {
            cx: 0.0,
            cy: self.ego.y,
            heading: self.ego.heading,
            half_len: VEHICLE_LENGTH / 2.0,
            half_wid: VEHICLE_WIDTH / 2.0,
        }
    }

    fn detect_collision(&self) -> bool {
        let extent = self.config.map_extent;
        if self.config.offroad_collision && self.ego.y.abs() > ROAD_HALF_WIDTH {
            return true;
        }
        let ego = self.ego_rect();
        self.npcs.iter().any(|n| {
            let mut r = npc_rect(n);
            r.cx = wrap_delta(r.cx - self.ego.x, extent);
            r.cx.abs() < 10.0 && ego.overlaps(&r)
        })
    }

    /// Next light ahead of the ego within the view range.
    pub fn light_ahead(&self) -> Option<LightAhead> {
        let extent = self.config.map_extent;
        self.lights
            .iter()
            .map(|l| (l, wrap_delta(l.x - self.ego.x, extent)))
            .filter(|(_, d)| *d > 0.0 && *d <= self.config.view.range_m)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, d)| LightAhead { phase: l.phase, distance_m: d })
    }

    fn to_ego_frame(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = wrap_delta(x - self.ego.x, self.config.map_extent);
        let dy = y - self.ego.y;
        let (s, c) = self.ego.heading.sin_cos();
        (dx * c + dy * s, -dx * s + dy * c)
    }

    fn static_class(&self, x: f64, y: f64) -> ClassId {
        let ay = y.abs();
        if ay < ROAD_HALF_WIDTH {
            ClassId::Road
        } else if ay < SIDEWALK_OUTER {
            ClassId::Sidewalk
        } else if ay < SCENERY_OUTER {
            let block = (x.rem_euclid(self.config.map_extent) / SCENERY_BLOCK).floor() as u64;
            let side = (y > 0.0) as u64;
            if mix3(self.config.seed, block, side) % 3 == 0 {
                ClassId::Vegetation
            } else {
                ClassId::Building
            }
        } else {
            ClassId::Void
        }
    }

    /// Ground-truth label grid and the matching appearance grid.
    pub fn render(&self) -> (SemanticGrid, AppearanceGrid) {
        let truth = self.render_labels();
        let appearance = self.render_appearance(&truth);
        (truth, appearance)
    }

    pub fn render_labels(&self) -> SemanticGrid {
        let view = &self.config.view;
        let mut grid = SemanticGrid::filled(view.rows, view.cols, ClassId::Void);
        let (s, c) = self.ego.heading.sin_cos();
        for row in 0..view.rows {
            let d = view.row_distance(row);
            for col in 0..view.cols {
                let l = view.lateral(row, col);
                let wx = self.ego.x + d * c - l * s;
                let wy = self.ego.y + d * s + l * c;
                grid.set(row, col, self.static_class(wx, wy));
            }
        }
        for light in &self.lights {
            let r = Rect {
                cx: light.x,
                cy: LIGHT_POLE_Y,
                heading: 0.0,
                half_len: LIGHT_POLE_SIZE / 2.0,
                half_wid: LIGHT_POLE_SIZE / 2.0,
            };
            self.rasterize(&mut grid, &r, ClassId::TrafficLight);
        }
        for kind in [NpcKind::Vehicle, NpcKind::Walker] {
            for npc in self.npcs.iter().filter(|n| n.kind == kind) {
                let class = match kind {
                    NpcKind::Vehicle => ClassId::Vehicle,
                    NpcKind::Walker => ClassId::Pedestrian,
                };
                self.rasterize(&mut grid, &npc_rect(npc), class);
            }
        }
        grid
    }

    fn rasterize(&self, grid: &mut SemanticGrid, rect: &Rect, class: ClassId) {
        let view = &self.config.view;
        let dx = wrap_delta(rect.cx - self.ego.x, self.config.map_extent);
        if dx < -10.0 || dx > view.range_m + 10.0 {
            return;
        }
        let (mut x0, mut x1, mut y0, mut y1) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for [cx, cy] in rect.corners() {
            let (ex, ey) = self.to_ego_frame(cx, cy);
            x0 = x0.min(ex);
            x1 = x1.max(ex);
            y0 = y0.min(ey);
            y1 = y1.max(ey);
        }
        if let Some((r0, r1)) = view.row_span(x0, x1) {
            for row in r0..=r1 {
                if let Some((c0, c1)) = view.col_span(row, y0, y1) {
                    for col in c0..=c1 {
                        grid.set(row, col, class);
                    }
                }
            }
        }
    }

    /// Palette colour scaled by sun altitude plus Gaussian noise whose
    /// deviation grows with cloud cover (and wind, on vegetation).
    pub fn render_appearance(&self, truth: &SemanticGrid) -> AppearanceGrid {
        let cfg = &self.config;
        let brightness = (0.7 + 0.3 * cfg.sun_altitude.to_radians().sin()) as f32;
        let sigma = cfg.noise_sigma * (1.0 + cfg.clouds / 100.0);
        let mut r = rng(mix3(cfg.seed, stream::RENDER, self.tick));
        let mut out = AppearanceGrid::filled(truth.rows(), truth.cols(), [0.0; 3]);
        for row in 0..truth.rows() {
            for col in 0..truth.cols() {
                let class = truth.get(row, col);
                let mut rgb = APPEARANCE_PALETTE[class.index()].map(|v| v * brightness);
                let s = if class == ClassId::Vegetation { sigma * (1.0 + cfg.wind / 100.0) } else { sigma };
                if s > 0.0 {
                    let normal = Normal::new(0.0, s).expect("finite sigma");
                    for v in &mut rgb {
                        *v += normal.sample(&mut r) as f32;
                    }
                }
                out.set(row, col, rgb);
            }
        }
        out
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}
