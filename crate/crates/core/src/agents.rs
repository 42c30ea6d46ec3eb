//! Scripted stand-ins for the two human operators.
//!
//! Both policies judge hazards with the same corridor rule: a connected
//! pedestrian or vehicle blob of at least `min_blob_cells` cells with a cell
//! whose centre lies within `halfwidth_m` of the ego's longitudinal axis.
//! With a perfect view the semantic driver therefore brakes for everything
//! the safety driver would, and earlier.

use crate::grid::{ClassId, SemanticGrid};
use crate::perception::object_components;
use crate::world::{kmh_to_ms, LightPhase, ViewGeometry, DEFAULT_DT, LANE_OFFSET, MAX_ACCEL, MAX_STEER_RAD};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Heads-up display shared by both drivers: speed and the phase of the next
/// traffic light ahead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hud {
    pub speed_kmh: f64,
    pub light_phase: Option<LightPhase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corridor {
    pub halfwidth_m: f64,
    /// Hazard blobs smaller than this are ignored.
    pub min_blob_cells: usize,
}

impl Default for Corridor {
    fn default() -> Self {
        Self { halfwidth_m: 1.5, min_blob_cells: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticPolicyParams {
    /// km/h, at most 50.
    pub cruise_speed: f64,
    pub corridor: Corridor,
    pub brake_distance_rows: usize,
    pub light_stop: bool,
}

impl Default for SemanticPolicyParams {
    fn default() -> Self {
        Self { cruise_speed: 40.0, corridor: Corridor::default(), brake_distance_rows: 34, light_stop: true }
    }
}

impl SemanticPolicyParams {
    pub fn validate(&self, view: &ViewGeometry) -> Result<(), String> {
        if !(self.cruise_speed > 0.0 && self.cruise_speed <= 50.0) {
            return Err(format!("cruise_speed {} outside (0, 50]", self.cruise_speed));
        }
        if !(self.corridor.halfwidth_m > 0.0) || self.corridor.halfwidth_m > view.half_width(view.range_m) {
            return Err("corridor must be positive and within the grid width".into());
        }
        if self.brake_distance_rows > view.rows {
            return Err("brake_distance_rows exceeds grid rows".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyPolicyParams {
    pub ttc_threshold: f64,
    pub reaction_delay: usize,
    pub corridor: Corridor,
}

impl Default for SafetyPolicyParams {
    fn default() -> Self {
        Self { ttc_threshold: 1.5, reaction_delay: 2, corridor: Corridor::default() }
    }
}

impl SafetyPolicyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.ttc_threshold > 0.0) {
            return Err("ttc_threshold must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    Walker,
    Vehicle,
    RedLight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hazard {
    pub kind: HazardKind,
    pub distance_m: f64,
    pub ttc: f64,
}

/// Nearest hazard cell inside the corridor: `(row, class)`.
pub fn nearest_corridor_hazard(grid: &SemanticGrid, view: &ViewGeometry, corridor: &Corridor) -> Option<(usize, ClassId)> {
    let cols = grid.cols();
    let mut best: Option<(usize, ClassId)> = None;
    for (class, cells) in object_components(grid) {
        if !class.is_hazard() || cells.len() < corridor.min_blob_cells {
            continue;
        }
        for &i in &cells {
            let (row, col) = (i / cols, i % cols);
            if view.lateral(row, col).abs() <= corridor.halfwidth_m && best.is_none_or(|(r, _)| row < r) {
                best = Some((row, class));
            }
        }
    }
    best
}

/// Nearest row containing a traffic-light cell anywhere in the grid.
pub fn nearest_light_row(grid: &SemanticGrid) -> Option<usize> {
    (0..grid.rows()).find(|&r| (0..grid.cols()).any(|c| grid.get(r, c) == ClassId::TrafficLight))
}

/// Mean lateral position of drivable cells over rows whose distance falls
/// in `[d0, d1]`, averaged per row.
fn drivable_centre(grid: &SemanticGrid, view: &ViewGeometry, d0: f64, d1: f64) -> Option<(f64, f64)> {
    let (mut sum, mut dist, mut n) = (0.0, 0.0, 0usize);
    for row in 0..grid.rows() {
        let d = view.row_distance(row);
        if d < d0 || d > d1 {
            continue;
        }
        let (mut s, mut k) = (0.0, 0usize);
        for col in 0..grid.cols() {
            if matches!(grid.get(row, col), ClassId::Road | ClassId::Vehicle | ClassId::Pedestrian) {
                s += view.lateral(row, col);
                k += 1;
            }
        }
        if k > 0 {
            sum += s / k as f64;
            dist += d;
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64, dist / n as f64))
}

fn lane_keeping_steer(view_grid: &SemanticGrid, view: &ViewGeometry, speed_ms: f64) -> f64 {
    let near = drivable_centre(view_grid, view, 4.0, 12.0);
    let far = drivable_centre(view_grid, view, 14.0, 24.0);
    let (Some((c_near, d_near)), Some((c_far, d_far))) = (near, far) else {
        return 0.0;
    };
    // the road centre should sit LANE_OFFSET to the left of the ego
    let lateral_err = c_near - LANE_OFFSET;
    let heading_err = (c_far - c_near).atan2(d_far - d_near);
    let delta = heading_err + (0.6 * lateral_err).atan2(1.0 + speed_ms);
    (delta / MAX_STEER_RAD).clamp(-1.0, 1.0)
}

/// Semantic driver: keeps the lane, brakes fully for hazards it can see in
/// its corridor or for a red/yellow light it can see ahead, otherwise
/// approaches `cruise_speed` without overshooting it on the next tick.
pub fn semantic_policy(view_grid: &SemanticGrid, hud: &Hud, view: &ViewGeometry, params: &SemanticPolicyParams) -> crate::arbitration::ControlCommand {
    use crate::arbitration::ControlCommand;
    let v = kmh_to_ms(hud.speed_kmh.max(0.0));
    let steer = lane_keeping_steer(view_grid, view, v);
    let hazard = nearest_corridor_hazard(view_grid, view, &params.corridor)
        .is_some_and(|(row, _)| row < params.brake_distance_rows);
    let light = params.light_stop
        && matches!(hud.light_phase, Some(LightPhase::Red | LightPhase::Yellow))
        && nearest_light_row(view_grid).is_some_and(|row| row < params.brake_distance_rows);
    if hazard || light {
        return ControlCommand { steer, throttle: 0.0, brake: 1.0 };
    }
    let cruise = kmh_to_ms(params.cruise_speed.min(50.0));
    let throttle = ((cruise - v) / (MAX_ACCEL * DEFAULT_DT)).clamp(0.0, 1.0);
    ControlCommand { steer, throttle, brake: 0.0 }
}

/// What the safety driver reacts to, before any reaction delay: the hazard
/// with the smallest time-to-collision under the threshold, provided the
/// semantic driver is not already braking hard.
pub fn safety_assessment(truth: &SemanticGrid, hud: &Hud, view: &ViewGeometry, pending_effective_brake: f64, params: &SafetyPolicyParams) -> Option<Hazard> {
    let v = kmh_to_ms(hud.speed_kmh);
    if v <= 0.0 || pending_effective_brake >= 0.5 {
        return None;
    }
    let mut candidates = Vec::with_capacity(2);
    if let Some((row, class)) = nearest_corridor_hazard(truth, view, &params.corridor) {
        let kind = if class == ClassId::Pedestrian { HazardKind::Walker } else { HazardKind::Vehicle };
        candidates.push((kind, view.row_distance(row)));
    }
    if hud.light_phase == Some(LightPhase::Red) {
        if let Some(row) = nearest_light_row(truth) {
            candidates.push((HazardKind::RedLight, view.row_distance(row)));
        }
    }
    candidates
        .into_iter()
        .map(|(kind, d)| Hazard { kind, distance_m: d, ttc: d / v })
        .filter(|h| h.ttc < params.ttc_threshold)
        .min_by(|a, b| a.ttc.total_cmp(&b.ttc))
}

/// Safety driver: full brake when [`safety_assessment`] finds a hazard,
/// otherwise no input at all.
pub fn safety_policy(truth: &SemanticGrid, hud: &Hud, view: &ViewGeometry, pending_effective_brake: f64, params: &SafetyPolicyParams) -> crate::arbitration::ControlCommand {
    use crate::arbitration::ControlCommand;
    match safety_assessment(truth, hud, view, pending_effective_brake, params) {
        Some(_) => ControlCommand::full_brake(),
        None => ControlCommand::ZERO,
    }
}

/// Delays safety decisions by `reaction_delay` ticks.
#[derive(Debug, Clone)]
pub struct SafetyDriver {
    delay: usize,
    queue: VecDeque<Option<Hazard>>,
}

impl SafetyDriver {
    pub fn new(params: &SafetyPolicyParams) -> Self {
        Self { delay: params.reaction_delay, queue: VecDeque::with_capacity(params.reaction_delay + 1) }
    }

    /// Feed this tick's assessment; returns the command acting now and the
    /// hazard that caused it.
    pub fn tick(&mut self, assessment: Option<Hazard>) -> (crate::arbitration::ControlCommand, Option<Hazard>) {
        use crate::arbitration::ControlCommand;
        self.queue.push_back(assessment);
        let due = if self.queue.len() > self.delay { self.queue.pop_front().flatten() } else { None };
        match due {
            Some(h) => (ControlCommand::full_brake(), Some(h)),
            None => (ControlCommand::ZERO, None),
        }
    }

    pub fn reset(&mut self) {
        self.queue.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitration::arbitrate;
    use crate::perception::{degrade, DegradationParams};
    use crate::world::{WorldConfig, WorldState};
    use proptest::prelude::*;

    fn view() -> ViewGeometry {
        ViewGeometry::default()
    }

    /// A straight-road view rendered by the world itself, ego in lane.
    fn road_grid() -> SemanticGrid {
        let cfg = WorldConfig {
            npc_vehicles: 0,
            npc_walkers: 0,
            npc_range: crate::world::NpcRange { min: 0, max: 24 },
            ..WorldConfig::default()
        };
        let mut w = WorldState::init(cfg).unwrap();
        w.lights.clear();
        w.render_labels()
    }

    fn centre_cols(v: &ViewGeometry, row: usize) -> Vec<usize> {
        (0..v.cols).filter(|&c| v.lateral(row, c).abs() <= 0.3).collect()
    }

    fn with_walker(row: usize, rows: usize) -> SemanticGrid {
        let v = view();
        let mut g = road_grid();
        for r in row..row + rows {
            for c in centre_cols(&v, r) {
                g.set(r, c, ClassId::Pedestrian);
            }
        }
        g
    }

    fn hud(speed_kmh: f64) -> Hud {
        Hud { speed_kmh, light_phase: None }
    }

    #[test]
    fn clear_road_below_cruise_means_throttle() {
        let cmd = semantic_policy(&road_grid(), &hud(20.0), &view(), &SemanticPolicyParams::default());
        assert!(cmd.throttle > 0.0);
        assert_eq!(cmd.brake, 0.0);
        assert!(cmd.steer.abs() < 0.05, "steer {}", cmd.steer);
    }

    #[test]
    fn walker_in_corridor_means_full_brake() {
        let g = with_walker(10, 2);
        let cmd = semantic_policy(&g, &hud(30.0), &view(), &SemanticPolicyParams::default());
        assert_eq!(cmd.brake, 1.0);
        assert_eq!(cmd.throttle, 0.0);
    }

    #[test]
    fn dropped_walker_is_not_braked_for() {
        // far walker: two cells wide, one row deep
        let v = view();
        let mut g = road_grid();
        let row = 30;
        let cols = centre_cols(&v, row);
        assert!(cols.len() >= 2 && cols.len() < 5);
        for &c in &cols {
            g.set(row, c, ClassId::Pedestrian);
        }
        let p = SemanticPolicyParams::default();
        assert_eq!(semantic_policy(&g, &hud(30.0), &v, &p).brake, 1.0);
        let lossy = DegradationParams {
            quality: 0.0,
            min_blob_cells: 5,
            blob_dropout_rate: 1.0,
            distance_noise_base: 0.0,
            boundary_flip_rate: 0.0,
            seed: 1,
        };
        let seen = degrade(&g, &lossy);
        assert_eq!(seen.count(ClassId::Pedestrian), 0);
        assert_eq!(semantic_policy(&seen, &hud(30.0), &v, &p).brake, 0.0);
    }

    #[test]
    fn throttle_never_overshoots_cruise() {
        let p = SemanticPolicyParams::default();
        for kmh in [0.0, 10.0, 38.9, 39.5, 40.0, 49.0] {
            let cmd = semantic_policy(&road_grid(), &hud(kmh), &view(), &p);
            let next = kmh_to_ms(kmh) + cmd.throttle * MAX_ACCEL * DEFAULT_DT;
            assert!(next <= kmh_to_ms(p.cruise_speed).max(kmh_to_ms(kmh)) + 1e-12);
            assert!(next <= kmh_to_ms(50.0));
        }
    }

    #[test]
    fn red_light_ahead_stops_the_semantic_driver() {
        let mut g = road_grid();
        g.set(20, 50, ClassId::TrafficLight);
        let red = Hud { speed_kmh: 30.0, light_phase: Some(LightPhase::Red) };
        let green = Hud { light_phase: Some(LightPhase::Green), ..red };
        let p = SemanticPolicyParams::default();
        assert_eq!(semantic_policy(&g, &red, &view(), &p).brake, 1.0);
        assert_eq!(semantic_policy(&g, &green, &view(), &p).brake, 0.0);
    }

    #[test]
    fn empty_corridor_means_no_safety_input() {
        let cmd = safety_policy(&road_grid(), &hud(40.0), &view(), 0.0, &SafetyPolicyParams::default());
        assert_eq!(cmd, crate::arbitration::ControlCommand::ZERO);
    }

    #[test]
    fn short_ttc_triggers_brake_and_intervention() {
        let v = view();
        // ego at 36 km/h = 10 m/s; a walker 8 m ahead is 0.8 s away
        let row = (0..v.rows).find(|&r| (v.row_distance(r) - 8.0).abs() < v.row_depth() / 2.0).unwrap();
        let g = with_walker(row, 1);
        let h = safety_assessment(&g, &hud(36.0), &v, 0.0, &SafetyPolicyParams::default()).unwrap();
        assert_eq!(h.kind, HazardKind::Walker);
        assert!((h.ttc - v.row_distance(row) / 10.0).abs() < 1e-12);
        assert!(h.ttc < 0.85 && h.ttc > 0.75);
        let safe = safety_policy(&g, &hud(36.0), &v, 0.0, &SafetyPolicyParams::default());
        assert_eq!(safe.brake, 1.0);
        let semantic = crate::arbitration::ControlCommand { throttle: 0.5, ..Default::default() };
        assert!(arbitrate(&semantic, &safe, 0.05).1);
        // semantic already braking hard: no double intervention
        let quiet = safety_policy(&g, &hud(36.0), &v, 1.0, &SafetyPolicyParams::default());
        assert_eq!(quiet, crate::arbitration::ControlCommand::ZERO);
    }

    #[test]
    fn safety_driver_applies_reaction_delay() {
        let mut d = SafetyDriver::new(&SafetyPolicyParams::default());
        let h = Hazard { kind: HazardKind::Vehicle, distance_m: 5.0, ttc: 0.5 };
        assert_eq!(d.tick(Some(h)).0.brake, 0.0);
        assert_eq!(d.tick(None).0.brake, 0.0);
        let (cmd, fired) = d.tick(None);
        assert_eq!(cmd.brake, 1.0);
        assert_eq!(fired, Some(h));
        assert_eq!(d.tick(None).0.brake, 0.0);
    }

    /// Brute-force scan over every cell, independent of component labelling
    /// order: nearest row with a qualifying hazard cell in the corridor.
    fn corridor_oracle(g: &SemanticGrid, v: &ViewGeometry, corridor: &Corridor) -> Option<usize> {
        let comps = object_components(g);
        let mut best = None;
        for row in 0..g.rows() {
            for col in 0..g.cols() {
                let class = g.get(row, col);
                if !class.is_hazard() || v.lateral(row, col).abs() > corridor.halfwidth_m {
                    continue;
                }
                let idx = row * g.cols() + col;
                let size = comps.iter().find(|(_, cells)| cells.contains(&idx)).map(|(_, c)| c.len()).unwrap();
                if size >= corridor.min_blob_cells && best.is_none() {
                    best = Some(row);
                }
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn safety_fires_only_for_ttc_hazards(
            blobs in proptest::collection::vec((0usize..64, 0usize..64, 1usize..4, 1usize..4, any::<bool>()), 0..6),
            speed in 1.0f64..50.0,
        ) {
            let v = view();
            let mut g = road_grid();
            for (r, c, h, w, ped) in blobs {
                for rr in r..(r + h).min(64) {
                    for cc in c..(c + w).min(64) {
                        g.set(rr, cc, if ped { ClassId::Pedestrian } else { ClassId::Vehicle });
                    }
                }
            }
            let p = SafetyPolicyParams::default();
            let cmd = safety_policy(&g, &hud(speed), &v, 0.0, &p);
            let expect = corridor_oracle(&g, &v, &p.corridor)
                .map(|row| v.row_distance(row) / kmh_to_ms(speed) < p.ttc_threshold)
                .unwrap_or(false);
            prop_assert_eq!(cmd.brake == 1.0, expect);
            prop_assert!(cmd.brake == 0.0 || cmd.brake == 1.0);
        }
    }
}
