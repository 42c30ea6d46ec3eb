//! Training-set construction: natural base scenes, fixed-size corner-case
//! swap-in, and pedestrian enrichment matched on cells per scene.

use crate::agents::{semantic_policy, Hud, SemanticPolicyParams};
use crate::capture::CornerCaseRecord;
use crate::grid::{decode_pgm, encode_pgm, AppearanceGrid, ClassId, SemanticGrid, NUM_CLASSES};
use crate::seed::{mix, mix3, rng, stream};
use crate::world::{ms_to_kmh, NpcRange, WorldConfig, WorldError, WorldState, DEFAULT_DT};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATASET_FORMAT: &str = "aeye-dataset/1";

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("enrichment stopped after {replacements} replacements and {candidates} candidates: pedestrian mean {achieved:.2} vs target {target:.2}")]
    Enrichment { achieved: f64, target: f64, replacements: usize, candidates: usize },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("format error in {}: {reason}", file.display())]
    Format { file: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Base,
    CornerCase,
    /// Pedestrian-heavy replacement frame.
    Enriched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub appearance: AppearanceGrid,
    pub label: SemanticGrid,
    pub origin: Origin,
    pub scene_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub frames: Vec<FrameSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: u64,
    pub n_scenes: usize,
    pub n_frames: usize,
    /// Free-form note on generation scale, e.g. "20 scenes x 12 frames".
    pub scale: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    pub scale: String,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, seed: u64, scenes: Vec<Scene>) -> Result<Self, CurationError> {
        let mut ids = HashSet::new();
        for s in &scenes {
            if !ids.insert(s.scene_id.as_str()) {
                return Err(CurationError::Input(format!("duplicate scene id {:?}", s.scene_id)));
            }
            for f in &s.frames {
                if f.appearance.shape() != f.label.shape() {
                    return Err(CurationError::Input(format!("frame shapes differ in scene {:?}", s.scene_id)));
                }
            }
        }
        let scale = format!("{} scenes", scenes.len());
        Ok(Self { name: name.into(), seed, scale, scenes })
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameSample> {
        self.scenes.iter().flat_map(|s| s.frames.iter())
    }

    pub fn n_frames(&self) -> usize {
        self.scenes.iter().map(|s| s.frames.len()).sum()
    }

    pub fn n_scenes(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames() == 0
    }

    pub fn count_origin(&self, origin: Origin) -> usize {
        self.frames().filter(|f| f.origin == origin).count()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            seed: self.seed,
            n_scenes: self.n_scenes(),
            n_frames: self.n_frames(),
            scale: self.scale.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPixelStats {
    pub n_scenes: usize,
    pub n_frames: usize,
    /// Cells per class over the whole dataset, indexed by class id.
    pub total_cells: [u64; NUM_CLASSES],
    pub mean_cells_per_scene: [f64; NUM_CLASSES],
}

impl ClassPixelStats {
    pub fn mean(&self, class: ClassId) -> f64 {
        self.mean_cells_per_scene[class.index()]
    }

    pub fn total(&self, class: ClassId) -> u64 {
        self.total_cells[class.index()]
    }
}

/// Cells per class summed over all frames, and that sum divided by the
/// number of scenes.
pub fn class_stats(ds: &Dataset) -> Result<ClassPixelStats, CurationError> {
    if ds.n_scenes() == 0 || ds.is_empty() {
        return Err(CurationError::Input("class statistics of an empty dataset".into()));
    }
    let mut total = [0u64; NUM_CLASSES];
    for f in ds.frames() {
        for (t, h) in total.iter_mut().zip(f.label.histogram()) {
            *t += h;
        }
    }
    let n = ds.n_scenes() as f64;
    Ok(ClassPixelStats {
        n_scenes: ds.n_scenes(),
        n_frames: ds.n_frames(),
        total_cells: total,
        mean_cells_per_scene: total.map(|t| t as f64 / n),
    })
}

fn pedestrian_cells(f: &FrameSample) -> u64 {
    f.label.count(ClassId::Pedestrian) as u64
}

/// Draws per-scene world configurations from the NPC and weather ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSampler {
    pub world: WorldConfig,
    pub vehicles: (u32, u32),
    pub walkers: (u32, u32),
    pub clouds: (f64, f64),
    pub wind: (f64, f64),
    pub sun_altitude: (f64, f64),
    /// Simulated seconds driven before the first frame is taken.
    pub warmup_seconds: f64,
    pub policy: SemanticPolicyParams,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            vehicles: (3, 8),
            walkers: (3, 10),
            clouds: (0.0, 30.0),
            wind: (0.0, 50.0),
            sun_altitude: (20.0, 90.0),
            warmup_seconds: 4.0,
            policy: SemanticPolicyParams::default(),
        }
    }
}

impl SceneSampler {
    /// Pedestrian-heavy variant used for enrichment: many more walkers, few
    /// vehicles.
    pub fn pedestrian_heavy(&self) -> Self {
        Self { vehicles: (2, 4), walkers: (28, 40), ..self.clone() }
    }

    pub fn sample_config(&self, seed: u64) -> WorldConfig {
        let mut r = rng(mix(seed, stream::SCENE));
        let draw_u = |r: &mut rand_chacha::ChaCha8Rng, (lo, hi): (u32, u32)| if hi > lo { r.random_range(lo..=hi) } else { lo };
        let draw_f = |r: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { r.random_range(lo..=hi) } else { lo };
        let npc_vehicles = draw_u(&mut r, self.vehicles);
        let npc_walkers = draw_u(&mut r, self.walkers);
        WorldConfig {
            seed,
            npc_vehicles,
            npc_walkers,
            npc_range: NpcRange {
                min: self.world.npc_range.min.min(self.vehicles.0 + self.walkers.0),
                max: self.world.npc_range.max.max(self.vehicles.1 + self.walkers.1),
            },
            clouds: draw_f(&mut r, self.clouds),
            wind: draw_f(&mut r, self.wind),
            sun_altitude: draw_f(&mut r, self.sun_altitude),
            ..self.world.clone()
        }
    }

    /// Roll a fresh world forward under the semantic policy on ground truth,
    /// taking one frame per simulated second.
    pub fn sample_scene(&self, seed: u64, scene_id: String, frames: usize, origin: Origin) -> Result<Scene, CurationError> {
        let mut world = WorldState::init(self.sample_config(seed))?;
        let ticks_per_frame = (1.0 / DEFAULT_DT).round() as usize;
        let warmup = (self.warmup_seconds / DEFAULT_DT).round() as usize;
        let view = world.config.view;
        let drive = |world: &mut WorldState| -> Result<(), CurationError> {
            let truth = world.render_labels();
            let hud = Hud { speed_kmh: ms_to_kmh(world.ego.speed), light_phase: world.light_ahead().map(|l| l.phase) };
            let cmd = semantic_policy(&truth, &hud, &view, &self.policy);
            world.step(&cmd, DEFAULT_DT)?;
            Ok(())
        };
        for _ in 0..warmup {
            drive(&mut world)?;
        }
        let mut out = Vec::with_capacity(frames);
        for _ in 0..frames {
            let (label, appearance) = world.render();
            out.push(FrameSample { appearance, label, origin, scene_id: scene_id.clone() });
            for _ in 0..ticks_per_frame {
                drive(&mut world)?;
            }
        }
        Ok(Scene { scene_id, frames: out })
    }
}

/// Generate `n_scenes` independent natural scenes of `frames_per_scene`
/// frames each. Deterministic in `(sampler, seed)`.
pub fn generate_base(sampler: &SceneSampler, n_scenes: usize, frames_per_scene: usize, seed: u64) -> Result<Dataset, CurationError> {
    generate_scenes(sampler, "natural", 0..n_scenes, frames_per_scene, seed)
}

fn generate_scenes(sampler: &SceneSampler, name: &str, indices: std::ops::Range<usize>, frames_per_scene: usize, seed: u64) -> Result<Dataset, CurationError> {
    if indices.is_empty() || frames_per_scene == 0 {
        return Err(CurationError::Input("n_scenes and frames_per_scene must be >= 1".into()));
    }
    let n = indices.len();
    let scenes = indices
        .into_par_iter()
        .map(|i| sampler.sample_scene(mix3(seed, stream::SCENE, i as u64), format!("scene-{i:03}"), frames_per_scene, Origin::Base))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ds = Dataset::new(name, seed, scenes)?;
    ds.scale = format!("{n} scenes x {frames_per_scene} frames");
    Ok(ds)
}

/// Training scenes plus a validation split held out at generation time
/// (`validation_fraction` of all scenes, rounded, at least one).
pub fn generate_with_validation(sampler: &SceneSampler, n_scenes: usize, frames_per_scene: usize, validation_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), CurationError> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(CurationError::Input("validation_fraction must lie in [0, 1)".into()));
    }
    let n_val = ((n_scenes as f64 * validation_fraction).round() as usize).max(1);
    if n_val >= n_scenes {
        return Err(CurationError::Input("validation split leaves no training scenes".into()));
    }
    let train = generate_scenes(sampler, "natural", 0..n_scenes - n_val, frames_per_scene, seed)?;
    let val = generate_scenes(sampler, "validation", n_scenes - n_val..n_scenes, frames_per_scene, seed)?;
    Ok((train, val))
}

/// Every corner-case frame becomes a training sample (appearance plus
/// ground truth) in its own scene.
pub fn corner_case_scene(record: &CornerCaseRecord) -> Scene {
    Scene {
        scene_id: record.id.clone(),
        frames: record
            .frames
            .iter()
            .map(|f| FrameSample {
                appearance: f.appearance.clone(),
                label: f.truth.clone(),
                origin: Origin::CornerCase,
                scene_id: record.id.clone(),
            })
            .collect(),
    }
}

/// Test set built from held-out corner cases.
pub fn dataset_from_records(name: &str, records: &[CornerCaseRecord]) -> Result<Dataset, CurationError> {
    let mut ds = Dataset::new(name, 0, records.iter().map(corner_case_scene).collect())?;
    ds.scale = format!("{} corner cases", records.len());
    Ok(ds)
}

/// Pick `k` base-origin frames to delete, uniformly at random, never taking
/// the last frame of a scene unless no other choice remains.
fn choose_deletions(ds: &Dataset, k: usize, seed: u64) -> Result<HashSet<(usize, usize)>, CurationError> {
    let mut candidates: Vec<(usize, usize)> = ds
        .scenes
        .iter()
        .enumerate()
        .flat_map(|(s, scene)| scene.frames.iter().enumerate().filter(|(_, f)| f.origin == Origin::Base).map(move |(i, _)| (s, i)))
        .collect();
    if k > candidates.len() {
        return Err(CurationError::Input(format!("{k} corner-case frames exceed {} deletable base frames", candidates.len())));
    }
    candidates.shuffle(&mut rng(mix(seed, stream::SWAP)));
    let mut remaining: Vec<usize> = ds.scenes.iter().map(|s| s.frames.len()).collect();
    let mut chosen = HashSet::with_capacity(k);
    let mut deferred = Vec::new();
    for &(s, i) in &candidates {
        if chosen.len() == k {
            break;
        }
        if remaining[s] > 1 {
            remaining[s] -= 1;
            chosen.insert((s, i));
        } else {
            deferred.push((s, i));
        }
    }
    for (s, i) in deferred {
        if chosen.len() == k {
            break;
        }
        remaining[s] -= 1;
        chosen.insert((s, i));
    }
    Ok(chosen)
}

/// Insert every corner-case frame and delete the same number of base frames,
/// keeping the total frame count fixed.
pub fn swap_in_corner_cases(base: &Dataset, ccs: &[CornerCaseRecord], seed: u64) -> Result<Dataset, CurationError> {
    let k: usize = ccs.iter().map(|r| r.frames.len()).sum();
    if k == 0 {
        return Ok(base.clone());
    }
    if k > base.n_frames() {
        return Err(CurationError::Input(format!("{k} corner-case frames exceed {} base frames", base.n_frames())));
    }
    let delete = choose_deletions(base, k, seed)?;
    let mut scenes: Vec<Scene> = base
        .scenes
        .iter()
        .enumerate()
        .map(|(s, scene)| Scene {
            scene_id: scene.scene_id.clone(),
            frames: scene.frames.iter().enumerate().filter(|(i, _)| !delete.contains(&(s, *i))).map(|(_, f)| f.clone()).collect(),
        })
        .filter(|s| !s.frames.is_empty())
        .collect();
    scenes.extend(ccs.iter().map(corner_case_scene));
    let mut ds = Dataset::new(format!("{}+cc", base.name), seed, scenes)?;
    ds.scale = base.scale.clone();
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentReport {
    pub target_mean: f64,
    pub achieved_mean: f64,
    pub replacements: usize,
    pub candidates: usize,
}

/// Replace uniformly chosen base frames with pedestrian-heavy frames until
/// the pedestrian cells per scene sit within `tol` (relative) of
/// `target_mean`. Replacements that would overshoot the band are skipped.
/// At most `5 x base size` candidate frames are drawn.
pub fn build_pedestrian_enriched(base: &Dataset, target_mean: f64, tol: f64, sampler: &SceneSampler, seed: u64) -> Result<(Dataset, EnrichmentReport), CurationError> {
    build_pedestrian_enriched_with_budget(base, target_mean, tol, sampler, seed, 5 * base.n_frames())
}

pub fn build_pedestrian_enriched_with_budget(base: &Dataset, target_mean: f64, tol: f64, sampler: &SceneSampler, seed: u64, budget: usize) -> Result<(Dataset, EnrichmentReport), CurationError> {
    if !(tol > 0.0 && tol <= 0.2) {
        return Err(CurationError::Input(format!("tolerance {tol} outside (0, 0.2]")));
    }
    let stats = class_stats(base)?;
    let n_scenes = base.n_scenes() as f64;
    let mut total = stats.total(ClassId::Pedestrian) as f64;
    if target_mean + 1e-12 < total / n_scenes {
        return Err(CurationError::Input(format!(
            "target {target_mean:.2} below current pedestrian mean {:.2}",
            total / n_scenes
        )));
    }
    let within = |total: f64| {
        let mean = total / n_scenes;
        if target_mean == 0.0 { mean == 0.0 } else { (mean - target_mean).abs() / target_mean <= tol }
    };
    let mut out = base.clone();
    out.name = format!("{}+ped", base.name);
    let mut report = EnrichmentReport { target_mean, achieved_mean: total / n_scenes, replacements: 0, candidates: 0 };
    if within(total) {
        return Ok((out, report));
    }

    let mut victims: Vec<(usize, usize)> = out
        .scenes
        .iter()
        .enumerate()
        .flat_map(|(s, scene)| scene.frames.iter().enumerate().filter(|(_, f)| f.origin == Origin::Base).map(move |(i, _)| (s, i)))
        .collect();
    let mut r = rng(mix(seed, stream::ENRICH));
    let heavy = sampler.pedestrian_heavy();
    let frames_per_scene = base.scenes.iter().map(|s| s.frames.len()).max().unwrap_or(1).max(1);
    let mut pool: Vec<FrameSample> = Vec::new();
    let mut scene_counter = 0u64;
    let upper = target_mean * (1.0 + tol);

    while report.candidates < budget && !victims.is_empty() {
        if pool.is_empty() {
            let scene = heavy.sample_scene(
                mix3(seed, stream::ENRICH, scene_counter),
                format!("enrich-{scene_counter:04}"),
                frames_per_scene,
                Origin::Enriched,
            )?;
            scene_counter += 1;
            pool = scene.frames;
            pool.reverse();
        }
        let candidate = pool.pop().expect("pool refilled");
        report.candidates += 1;
        let pick = r.random_range(0..victims.len());
        let (s, i) = victims[pick];
        let old = pedestrian_cells(&out.scenes[s].frames[i]) as f64;
        let new_total = total - old + pedestrian_cells(&candidate) as f64;
        if new_total <= total || new_total / n_scenes > upper {
            continue;
        }
        victims.swap_remove(pick);
        let scene_id = out.scenes[s].scene_id.clone();
        out.scenes[s].frames[i] = FrameSample { scene_id, ..candidate };
        total = new_total;
        report.replacements += 1;
        if within(total) {
            report.achieved_mean = total / n_scenes;
            return Ok((out, report));
        }
    }
    Err(CurationError::Enrichment {
        achieved: total / n_scenes,
        target: target_mean,
        replacements: report.replacements,
        candidates: report.candidates,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameEntry {
    index: usize,
    origin: Origin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneEntry {
    scene_id: String,
    frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    name: String,
    seed: u64,
    scale: String,
    rows: usize,
    cols: usize,
    scenes: Vec<SceneEntry>,
    stats: Option<ClassPixelStats>,
}

fn storage(path: &Path, e: std::io::Error) -> CurationError {
    CurationError::Storage(format!("{}: {e}", path.display()))
}

/// Write `<root>/dataset.json` and `<root>/<scene_id>/frames/NNN.{truth.pgm,app.bin}`.
pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<(), CurationError> {
    let (rows, cols) = ds.frames().next().map(|f| f.label.shape()).unwrap_or((0, 0));
    let mut entries = Vec::with_capacity(ds.n_scenes());
    for scene in &ds.scenes {
        let dir = root.join(&scene.scene_id).join("frames");
        fs::create_dir_all(&dir).map_err(|e| storage(&dir, e))?;
        for (i, f) in scene.frames.iter().enumerate() {
            let t = dir.join(format!("{i:03}.truth.pgm"));
            let a = dir.join(format!("{i:03}.app.bin"));
            fs::write(&t, encode_pgm(&f.label)).map_err(|e| storage(&t, e))?;
            fs::write(&a, f.appearance.to_le_bytes()).map_err(|e| storage(&a, e))?;
        }
        entries.push(SceneEntry {
            scene_id: scene.scene_id.clone(),
            frames: scene.frames.iter().enumerate().map(|(index, f)| FrameEntry { index, origin: f.origin }).collect(),
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        name: ds.name.clone(),
        seed: ds.seed,
        scale: ds.scale.clone(),
        rows,
        cols,
        scenes: entries,
        stats: class_stats(ds).ok(),
    };
    let path = root.join("dataset.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest).expect("manifest serialises")).map_err(|e| storage(&path, e))
}

pub fn load_dataset(root: &Path) -> Result<Dataset, CurationError> {
    let path = root.join("dataset.json");
    let fmt = |file: &Path, reason: String| CurationError::Format { file: file.to_path_buf(), reason };
    let bytes = fs::read(&path).map_err(|e| fmt(&path, e.to_string()))?;
    let m: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| fmt(&path, e.to_string()))?;
    if m.format != DATASET_FORMAT {
        return Err(fmt(&path, format!("unknown format {:?}", m.format)));
    }
    let mut scenes = Vec::with_capacity(m.scenes.len());
    for entry in m.scenes {
        let dir = root.join(&entry.scene_id).join("frames");
        let mut frames = Vec::with_capacity(entry.frames.len());
        for fe in entry.frames {
            let t = dir.join(format!("{:03}.truth.pgm", fe.index));
            let a = dir.join(format!("{:03}.app.bin", fe.index));
            let label = decode_pgm(&fs::read(&t).map_err(|e| fmt(&t, e.to_string()))?).map_err(|e| fmt(&t, e.to_string()))?;
            let appearance = AppearanceGrid::from_le_bytes(m.rows, m.cols, &fs::read(&a).map_err(|e| fmt(&a, e.to_string()))?)
                .map_err(|e| fmt(&a, e.to_string()))?;
            frames.push(FrameSample { appearance, label, origin: fe.origin, scene_id: entry.scene_id.clone() });
        }
        scenes.push(Scene { scene_id: entry.scene_id, frames });
    }
    let mut ds = Dataset::new(m.name, m.seed, scenes)?;
    ds.scale = m.scale;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitration::{ControlCommand, InterventionCause, InterventionEvent};
    use crate::capture::FrameRecord;
    use proptest::prelude::*;

    fn sample(scene: &str, peds: usize, origin: Origin) -> FrameSample {
        let mut label = SemanticGrid::filled(4, 4, ClassId::Road);
        for i in 0..peds {
            label.set_at(i, ClassId::Pedestrian);
        }
        FrameSample { appearance: AppearanceGrid::filled(4, 4, [0.5; 3]), label, origin, scene_id: scene.into() }
    }

    fn toy(scene_sizes: &[usize]) -> Dataset {
        let scenes = scene_sizes
            .iter()
            .enumerate()
            .map(|(s, &n)| Scene {
                scene_id: format!("s{s}"),
                frames: (0..n).map(|i| sample(&format!("s{s}"), i % 3, Origin::Base)).collect(),
            })
            .collect();
        Dataset::new("toy", 0, scenes).unwrap()
    }

    fn record(id: &str, n: usize) -> CornerCaseRecord {
        CornerCaseRecord {
            id: id.into(),
            frames: (0..n)
                .map(|t| FrameRecord {
                    tick_index: t as u64 + 1,
                    timestamp: (t as f64 + 1.0) * 0.1,
                    truth: SemanticGrid::filled(4, 4, ClassId::Pedestrian),
                    predicted: SemanticGrid::filled(4, 4, ClassId::Road),
                    appearance: AppearanceGrid::filled(4, 4, [0.1; 3]),
                    ego_speed_kmh: 20.0,
                    effective_cmd: ControlCommand::ZERO,
                })
                .collect(),
            event: InterventionEvent { timestamp: 3.1, odometer_km: 0.5, cause: InterventionCause::OverlookedWalker, comment: String::new() },
            km_driven_at_event: 0.5,
            ride_duration_at_event: 1.0,
            fps: 10,
        }
    }

    #[test]
    fn stats_mean_is_total_over_scenes() {
        let ds = Dataset::new(
            "two",
            0,
            vec![
                Scene { scene_id: "a".into(), frames: vec![sample("a", 4, Origin::Base), sample("a", 6, Origin::Base)] },
                Scene { scene_id: "b".into(), frames: vec![sample("b", 16, Origin::Base), sample("b", 14, Origin::Base)] },
            ],
        )
        .unwrap();
        let st = class_stats(&ds).unwrap();
        assert_eq!(st.total(ClassId::Pedestrian), 40);
        assert_eq!(st.mean(ClassId::Pedestrian), 20.0);
    }

    #[test]
    fn all_void_dataset_has_zero_means() {
        let f = FrameSample {
            appearance: AppearanceGrid::filled(3, 3, [0.0; 3]),
            label: SemanticGrid::filled(3, 3, ClassId::Void),
            origin: Origin::Base,
            scene_id: "v".into(),
        };
        let ds = Dataset::new("void", 0, vec![Scene { scene_id: "v".into(), frames: vec![f] }]).unwrap();
        let st = class_stats(&ds).unwrap();
        assert!(ClassId::ALL[1..].iter().all(|&c| st.mean(c) == 0.0));
        assert!(class_stats(&Dataset::new("e", 0, vec![]).unwrap()).is_err());
    }

    #[test]
    fn hand_built_stats_match_a_recount() {
        let ds = toy(&[3, 5, 2]);
        let st = class_stats(&ds).unwrap();
        for class in ClassId::ALL {
            let mut n = 0u64;
            for scene in &ds.scenes {
                for f in &scene.frames {
                    for r in 0..4 {
                        for c in 0..4 {
                            n += (f.label.get(r, c) == class) as u64;
                        }
                    }
                }
            }
            assert_eq!(st.total(class), n);
            assert_eq!(st.mean(class), n as f64 / 3.0);
        }
    }

    #[test]
    fn duplicate_scene_ids_are_rejected() {
        let s = Scene { scene_id: "x".into(), frames: vec![] };
        assert!(Dataset::new("d", 0, vec![s.clone(), s]).is_err());
    }

    #[test]
    fn swap_keeps_size_and_marks_provenance() {
        let base = toy(&[12; 20]);
        let out = swap_in_corner_cases(&base, &[record("cc-1", 30), record("cc-2", 30)], 5).unwrap();
        assert_eq!(out.n_frames(), 240);
        assert_eq!(out.count_origin(Origin::CornerCase), 60);
        assert_eq!(swap_in_corner_cases(&base, &[], 5).unwrap(), base);
        assert_eq!(out, swap_in_corner_cases(&base, &[record("cc-1", 30), record("cc-2", 30)], 5).unwrap());
        // every original scene keeps at least one frame
        assert_eq!(out.n_scenes(), 22);
    }

    #[test]
    fn swap_rejects_oversized_corner_cases() {
        let base = toy(&[10]);
        assert!(matches!(swap_in_corner_cases(&base, &[record("c", 11)], 0), Err(CurationError::Input(_))));
    }

    #[test]
    fn swap_empties_scenes_only_when_unavoidable() {
        let base = toy(&[2, 2]);
        let out = swap_in_corner_cases(&base, &[record("c", 3)], 1).unwrap();
        assert_eq!(out.n_frames(), 4);
        assert_eq!(out.count_origin(Origin::Base), 1);
    }

    #[test]
    fn enrichment_at_current_mean_changes_nothing() {
        let base = toy(&[6, 6]);
        let mean = class_stats(&base).unwrap().mean(ClassId::Pedestrian);
        let (out, rep) = build_pedestrian_enriched(&base, mean, 0.05, &SceneSampler::default(), 1).unwrap();
        assert_eq!(rep.replacements, 0);
        assert_eq!(out.scenes, base.scenes);
    }

    #[test]
    fn enrichment_rejects_bad_targets_and_tolerances() {
        let base = toy(&[6, 6]);
        let mean = class_stats(&base).unwrap().mean(ClassId::Pedestrian);
        let s = SceneSampler::default();
        assert!(build_pedestrian_enriched(&base, mean - 1.0, 0.05, &s, 1).is_err());
        assert!(build_pedestrian_enriched(&base, mean, 0.0, &s, 1).is_err());
        assert!(build_pedestrian_enriched(&base, mean, 0.3, &s, 1).is_err());
    }

    #[test]
    fn unreachable_target_reports_achieved_mean() {
        let base = toy(&[3, 3]);
        let mean = class_stats(&base).unwrap().mean(ClassId::Pedestrian);
        let s = SceneSampler { world: WorldConfig { view: crate::world::ViewGeometry { rows: 4, cols: 4, ..Default::default() }, ..Default::default() }, ..Default::default() };
        match build_pedestrian_enriched_with_budget(&base, mean * 10.0, 0.05, &s, 1, 2) {
            Err(CurationError::Enrichment { achieved, target, candidates, .. }) => {
                assert_eq!(candidates, 2);
                assert!(achieved < target);
            }
            other => panic!("expected enrichment error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = swap_in_corner_cases(&toy(&[12, 12]), &[record("cc-9", 5)], 3).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn swap_conserves_size(sizes in proptest::collection::vec(1usize..15, 1..12), ccs in proptest::collection::vec(1usize..10, 0..5), seed in any::<u64>()) {
            let base = toy(&sizes);
            let records: Vec<_> = ccs.iter().enumerate().map(|(i, &n)| record(&format!("cc-{i}"), n)).collect();
            let k: usize = ccs.iter().sum();
            match swap_in_corner_cases(&base, &records, seed) {
                Ok(out) => {
                    prop_assert_eq!(out.n_frames(), base.n_frames());
                    prop_assert_eq!(out.count_origin(Origin::CornerCase), k);
                }
                Err(_) => prop_assert!(k > base.n_frames()),
            }
        }
    }
}
