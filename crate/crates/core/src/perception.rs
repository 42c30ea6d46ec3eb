//! Machine perception stand-ins.
//!
//! [`degrade`] is a seedable corruption channel that turns ground truth into
//! the semantic driver's imperfect view. [`PerceiverModel`] is a small
//! per-cell softmax classifier over an appearance window, trained with
//! cross entropy and Adam under a polynomial learning-rate decay.

use crate::curation::Dataset;
use crate::grid::{AppearanceGrid, ClassId, SemanticGrid, NUM_CLASSES};
use crate::seed::{mix, mix3, rng, stream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("invalid parameter `{0}`: {1}")]
    Param(&'static str, String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("model format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationParams {
    /// 1 is perfect perception; every corruption rate is scaled by `1 - quality`.
    pub quality: f64,
    pub min_blob_cells: usize,
    pub blob_dropout_rate: f64,
    pub distance_noise_base: f64,
    pub boundary_flip_rate: f64,
    pub seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            quality: 0.5,
            min_blob_cells: 10,
            blob_dropout_rate: 0.7,
            distance_noise_base: 0.02,
            boundary_flip_rate: 0.03,
            seed: 0,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let probs = [
            ("quality", self.quality),
            ("blob_dropout_rate", self.blob_dropout_rate),
            ("distance_noise_base", self.distance_noise_base),
            ("boundary_flip_rate", self.boundary_flip_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(PerceptionError::Param(name, format!("{p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn neighbours(rows: usize, cols: usize, idx: usize) -> impl Iterator<Item = usize> {
    let (r, c) = ((idx / cols) as isize, (idx % cols) as isize);
    NEIGHBOURS.into_iter().filter_map(move |(dr, dc)| {
        let (nr, nc) = (r + dr, c + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols)
            .then(|| nr as usize * cols + nc as usize)
    })
}

/// 4-connected components of equal object-class cells, in scan order of
/// their first cell. Each component lists its cell indices.
pub fn object_components(grid: &SemanticGrid) -> Vec<(ClassId, Vec<usize>)> {
    let (rows, cols) = grid.shape();
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        let class = grid.at(start);
        if seen[start] || !class.is_object() {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut cells = Vec::new();
        while let Some(i) = stack.pop() {
            cells.push(i);
            for n in neighbours(rows, cols, i) {
                if !seen[n] && grid.at(n) == class {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        cells.sort_unstable();
        out.push((class, cells));
    }
    out
}

/// Majority class among cells bordering `cells` (ties: lowest id).
fn surrounding_class(grid: &SemanticGrid, cells: &[usize]) -> ClassId {
    let (rows, cols) = grid.shape();
    let mut member = std::collections::HashSet::with_capacity(cells.len());
    member.extend(cells.iter().copied());
    let mut counts = [0usize; NUM_CLASSES];
    let mut border = std::collections::HashSet::new();
    for &i in cells {
        for n in neighbours(rows, cols, i) {
            if !member.contains(&n) && border.insert(n) {
                counts[grid.at(n).index()] += 1;
            }
        }
    }
    let best = counts.iter().enumerate().fold((0, 0), |best, (k, &n)| if n > best.1 { (k, n) } else { best });
    ClassId::ALL[best.0]
}

/// Corrupt a ground-truth grid. Three stages, each scaled by `1 - quality`:
/// small object blobs vanish into their surroundings, cells flip to random
/// classes with a probability that grows with distance, and cells on class
/// boundaries bleed into a neighbouring class.
pub fn degrade(truth: &SemanticGrid, params: &DegradationParams) -> SemanticGrid {
    let scale = 1.0 - params.quality.clamp(0.0, 1.0);
    if scale == 0.0 {
        return truth.clone();
    }
    let (rows, cols) = truth.shape();
    let mut r = rng(mix(params.seed, stream::DEGRADE));
    let mut out = truth.clone();

    let dropout = params.blob_dropout_rate * scale;
    for (_, cells) in object_components(truth) {
        if cells.len() >= params.min_blob_cells {
            continue;
        }
        if r.random::<f64>() < dropout {
            let fill = surrounding_class(truth, &cells);
            for &i in &cells {
                out.set_at(i, fill);
            }
        }
    }

    let noise = params.distance_noise_base * scale;
    if noise > 0.0 {
        for row in 0..rows {
            let p = noise * row as f64 / rows as f64;
            for col in 0..cols {
                if r.random::<f64>() < p {
                    let cur = out.get(row, col).index();
                    let pick = r.random_range(0..NUM_CLASSES - 1);
                    let new = if pick >= cur { pick + 1 } else { pick };
                    out.set(row, col, ClassId::ALL[new]);
                }
            }
        }
    }

    let flip = params.boundary_flip_rate * scale;
    if flip > 0.0 {
        let before = out.clone();
        let mut differing = Vec::with_capacity(4);
        for i in 0..before.len() {
            let own = before.at(i);
            differing.clear();
            differing.extend(neighbours(rows, cols, i).map(|n| before.at(n)).filter(|&c| c != own));
            if differing.is_empty() {
                continue;
            }
            if r.random::<f64>() < flip {
                let pick = differing[r.random_range(0..differing.len())];
                out.set_at(i, pick);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub poly_power: f64,
    pub moment1: f64,
    pub moment2: f64,
    pub batch_cells: usize,
    pub seed: u64,
    pub window_radius: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr0: 0.05,
            poly_power: 0.9,
            moment1: 0.9,
            moment2: 0.999,
            batch_cells: 512,
            seed: 0,
            window_radius: 1,
        }
    }
}

impl TrainConfig {
    /// Polynomial decay `lr0 * (1 - step/total)^poly_power`.
    pub fn learning_rate(&self, step: usize, total_steps: usize) -> f64 {
        if total_steps == 0 {
            return self.lr0;
        }
        let frac = (step as f64 / total_steps as f64).min(1.0);
        self.lr0 * (1.0 - frac).powf(self.poly_power)
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(self.lr0 > 0.0) {
            return Err(PerceptionError::Param("lr0", "must be > 0".into()));
        }
        if !(self.poly_power >= 0.0) {
            return Err(PerceptionError::Param("poly_power", "must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.moment1) || !(0.0..1.0).contains(&self.moment2) {
            return Err(PerceptionError::Param("moment1/moment2", "must lie in [0, 1)".into()));
        }
        if self.batch_cells == 0 {
            return Err(PerceptionError::Param("batch_cells", "must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn feature_dim(window_radius: usize) -> usize {
    let w = 2 * window_radius + 1;
    3 * w * w + 2
}

/// Appearance window around `(row, col)` (zero-padded outside the grid)
/// followed by the normalised position `(row / rows, col / cols)`.
pub fn cell_features(app: &AppearanceGrid, row: usize, col: usize, window_radius: usize) -> Result<Vec<f64>, PerceptionError> {
    if row >= app.rows() || col >= app.cols() {
        return Err(PerceptionError::Input(format!(
            "cell ({row}, {col}) outside {}x{} grid",
            app.rows(),
            app.cols()
        )));
    }
    let mut out = vec![0.0; feature_dim(window_radius)];
    write_features(app, row, col, window_radius, &mut out);
    Ok(out)
}

fn write_features(app: &AppearanceGrid, row: usize, col: usize, radius: usize, out: &mut [f64]) {
    let (rows, cols) = app.shape();
    let cells = app.cells();
    let r = radius as isize;
    let mut k = 0;
    for dr in -r..=r {
        for dc in -r..=r {
            let (nr, nc) = (row as isize + dr, col as isize + dc);
            if nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols {
                let v = cells[nr as usize * cols + nc as usize];
                out[k] = v[0] as f64;
                out[k + 1] = v[1] as f64;
                out[k + 2] = v[2] as f64;
            } else {
                out[k] = 0.0;
                out[k + 1] = 0.0;
                out[k + 2] = 0.0;
            }
            k += 3;
        }
    }
    out[k] = row as f64 / rows as f64;
    out[k + 1] = col as f64 / cols as f64;
}

/// Linear softmax classifier applied independently to every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceiverModel {
    pub window_radius: usize,
    /// `[NUM_CLASSES x feature_dim]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const MODEL_MAGIC: &[u8; 8] = b"AEYE-PM1";

impl PerceiverModel {
    pub fn zeros(window_radius: usize) -> Self {
        Self {
            window_radius,
            weights: vec![0.0; NUM_CLASSES * feature_dim(window_radius)],
            bias: vec![0.0; NUM_CLASSES],
        }
    }

    /// Weights uniform in [-0.01, 0.01], zero bias.
    pub fn seeded(window_radius: usize, seed: u64) -> Self {
        let mut m = Self::zeros(window_radius);
        let mut r = rng(mix(seed, stream::MODEL_INIT));
        for w in &mut m.weights {
            *w = r.random_range(-0.01..=0.01);
        }
        m
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.window_radius)
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn scores(&self, x: &[f64], out: &mut [f64; NUM_CLASSES]) {
        let d = x.len();
        for (k, s) in out.iter_mut().enumerate() {
            let w = &self.weights[k * d..(k + 1) * d];
            *s = self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Softmax class distribution for one feature vector.
    pub fn probabilities(&self, x: &[f64]) -> [f64; NUM_CLASSES] {
        let mut s = [0.0; NUM_CLASSES];
        self.scores(x, &mut s);
        softmax_in_place(&mut s);
        s
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.num_classes() as u32).to_le_bytes());
        out.extend_from_slice(&(self.window_radius as u32).to_le_bytes());
        out.extend_from_slice(&(self.feature_dim() as u32).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PerceptionError> {
        let fmt = |m: &str| PerceptionError::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MODEL_MAGIC {
            return Err(fmt("missing AEYE-PM1 header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (k, radius, d) = (u32_at(8), u32_at(12), u32_at(16));
        if k != NUM_CLASSES {
            return Err(fmt(&format!("expected {NUM_CLASSES} classes, found {k}")));
        }
        if d != feature_dim(radius) {
            return Err(fmt(&format!("feature_dim {d} inconsistent with window radius {radius}")));
        }
        let body = &bytes[20..];
        if body.len() != 8 * (k * d + k) {
            return Err(fmt(&format!("expected {} payload bytes, found {}", 8 * (k * d + k), body.len())));
        }
        let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (weights, bias) = vals.split_at(k * d);
        let model = Self { window_radius: radius, weights: weights.to_vec(), bias: bias.to_vec() };
        if !model.is_finite() {
            return Err(fmt("non-finite parameter"));
        }
        Ok(model)
    }
}

fn softmax_in_place(s: &mut [f64; NUM_CLASSES]) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in s.iter_mut() {
        *v /= z;
    }
}

/// Adds the per-sample cross-entropy gradient into `grad` and returns the loss.
fn accumulate_sample(model: &PerceiverModel, x: &[f64], y: usize, grad: &mut PerceiverModel) -> f64 {
    let mut p = [0.0; NUM_CLASSES];
    model.scores(x, &mut p);
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + p.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let loss = log_z - p[y];
    let d = x.len();
    for k in 0..NUM_CLASSES {
        let g = (p[k] - log_z).exp() - if k == y { 1.0 } else { 0.0 };
        grad.bias[k] += g;
        let row = &mut grad.weights[k * d..(k + 1) * d];
        for (w, xi) in row.iter_mut().zip(x) {
            *w += g * xi;
        }
    }
    loss
}

/// Mean cross entropy over the batch and its exact gradient, returned as a
/// model-shaped parameter set.
pub fn loss_and_grad(model: &PerceiverModel, batch: &[(Vec<f64>, ClassId)]) -> Result<(f64, PerceiverModel), PerceptionError> {
    if batch.is_empty() {
        return Err(PerceptionError::Input("empty batch".into()));
    }
    let d = model.feature_dim();
    let mut grad = PerceiverModel::zeros(model.window_radius);
    let mut loss = 0.0;
    for (x, y) in batch {
        if x.len() != d {
            return Err(PerceptionError::Input(format!("feature length {} != {d}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PerceptionError::Input("non-finite feature".into()));
        }
        loss += accumulate_sample(model, x, y.index(), &mut grad);
    }
    let n = batch.len() as f64;
    grad.weights.iter_mut().chain(grad.bias.iter_mut()).for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, b1: f64, b2: f64) {
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Train a perceiver on every cell of every frame. Deterministic in
/// `(dataset, cfg)`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<PerceiverModel, PerceptionError> {
    cfg.validate()?;
    let frames: Vec<_> = dataset.frames().collect();
    if frames.is_empty() {
        return Err(PerceptionError::Input("empty dataset".into()));
    }
    let mut model = PerceiverModel::seeded(cfg.window_radius, cfg.seed);
    if cfg.epochs == 0 {
        return Ok(model);
    }
    let mut index: Vec<(u32, u32)> = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        for c in 0..frame.label.len() {
            index.push((f as u32, c as u32));
        }
    }
    let batches_per_epoch = index.len().div_ceil(cfg.batch_cells);
    let total_steps = batches_per_epoch * cfg.epochs;
    let d = model.feature_dim();
    let n_params = model.weights.len() + model.bias.len();
    let mut adam = Adam::new(n_params);
    let mut grad = PerceiverModel::zeros(cfg.window_radius);
    let mut x = vec![0.0; d];
    let mut flat_params = vec![0.0; n_params];
    let mut flat_grad = vec![0.0; n_params];
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        index.shuffle(&mut rng(mix3(cfg.seed, stream::SHUFFLE, epoch as u64)));
        for batch in index.chunks(cfg.batch_cells) {
            grad.weights.iter_mut().for_each(|g| *g = 0.0);
            grad.bias.iter_mut().for_each(|g| *g = 0.0);
            for &(f, c) in batch {
                let frame = frames[f as usize];
                let cols = frame.label.cols();
                let (row, col) = (c as usize / cols, c as usize % cols);
                write_features(&frame.appearance, row, col, cfg.window_radius, &mut x);
                accumulate_sample(&model, &x, frame.label.at(c as usize).index(), &mut grad);
            }
            let n = batch.len() as f64;
            let (wl, bl) = (model.weights.len(), model.bias.len());
            flat_params[..wl].copy_from_slice(&model.weights);
            flat_params[wl..].copy_from_slice(&model.bias);
            for (dst, g) in flat_grad.iter_mut().zip(grad.weights.iter().chain(&grad.bias)) {
                *dst = g / n;
            }
            let lr = cfg.learning_rate(step, total_steps);
            adam.update(&mut flat_params, &flat_grad, lr, cfg.moment1, cfg.moment2);
            model.weights.copy_from_slice(&flat_params[..wl]);
            model.bias.copy_from_slice(&flat_params[wl..wl + bl]);
            step += 1;
        }
    }
    Ok(model)
}

/// Per-cell argmax of the class scores; exact ties go to the lowest class id.
pub fn predict(model: &PerceiverModel, app: &AppearanceGrid) -> SemanticGrid {
    let (rows, cols) = app.shape();
    let mut out = SemanticGrid::filled(rows, cols, ClassId::Void);
    let mut x = vec![0.0; model.feature_dim()];
    let mut s = [0.0; NUM_CLASSES];
    for row in 0..rows {
        for col in 0..cols {
            write_features(app, row, col, model.window_radius, &mut x);
            model.scores(&x, &mut s);
            let mut best = 0;
            for k in 1..NUM_CLASSES {
                if s[k] > s[best] {
                    best = k;
                }
            }
            out.set(row, col, ClassId::ALL[best]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with_blob(rows: usize, cols: usize, blob: &[(usize, usize)]) -> SemanticGrid {
        let mut g = SemanticGrid::filled(rows, cols, ClassId::Road);
        for &(r, c) in blob {
            g.set(r, c, ClassId::Pedestrian);
        }
        g
    }

    #[test]
    fn quality_one_is_identity() {
        let g = grid_with_blob(16, 16, &[(3, 3), (3, 4)]);
        for seed in 0..20 {
            let p = DegradationParams { quality: 1.0, seed, ..Default::default() };
            assert_eq!(degrade(&g, &p), g);
        }
    }

    #[test]
    fn small_blob_is_dropped_into_its_surroundings() {
        let g = grid_with_blob(10, 10, &[(4, 4), (4, 5), (5, 5)]);
        let comps = object_components(&g);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].1.len(), 3);
        let p = DegradationParams {
            quality: 0.0,
            min_blob_cells: 10,
            blob_dropout_rate: 1.0,
            distance_noise_base: 0.0,
            boundary_flip_rate: 0.0,
            seed: 3,
        };
        let out = degrade(&g, &p);
        assert_eq!(out.count(ClassId::Pedestrian), 0);
        assert_eq!(out, SemanticGrid::filled(10, 10, ClassId::Road));
    }

    #[test]
    fn large_blobs_survive_dropout() {
        let blob: Vec<_> = (0..4).flat_map(|r| (0..3).map(move |c| (4 + r, 4 + c))).collect();
        let g = grid_with_blob(10, 10, &blob);
        let p = DegradationParams {
            quality: 0.0,
            min_blob_cells: 10,
            blob_dropout_rate: 1.0,
            distance_noise_base: 0.0,
            boundary_flip_rate: 0.0,
            ..Default::default()
        };
        assert_eq!(degrade(&g, &p), g);
    }

    #[test]
    fn surrounding_majority_breaks_ties_low() {
        let mut g = SemanticGrid::filled(3, 3, ClassId::Building);
        g.set(1, 1, ClassId::Pedestrian);
        g.set(0, 1, ClassId::Road);
        g.set(2, 1, ClassId::Road);
        // border: road x2, building x2 -> road (id 1) wins the tie
        assert_eq!(surrounding_class(&g, &[4]), ClassId::Road);
    }

    #[test]
    fn far_row_noise_matches_its_rate() {
        let g = SemanticGrid::filled(64, 64, ClassId::Road);
        let p = DegradationParams {
            quality: 0.0,
            distance_noise_base: 0.2,
            blob_dropout_rate: 0.0,
            boundary_flip_rate: 0.0,
            ..Default::default()
        };
        let mut flipped = 0usize;
        for seed in 0..100 {
            let out = degrade(&g, &p.with_seed(seed));
            flipped += (0..64).filter(|&c| out.get(63, c) != ClassId::Road).count();
            assert!((0..64).all(|c| out.get(0, c) == ClassId::Road));
        }
        let frac = flipped as f64 / 6400.0;
        assert!((frac - 0.2 * 63.0 / 64.0).abs() <= 0.05, "{frac}");
    }

    #[test]
    fn degrade_is_seed_deterministic() {
        let g = grid_with_blob(32, 32, &[(10, 10), (10, 11), (20, 5)]);
        let p = DegradationParams { quality: 0.2, seed: 77, ..Default::default() };
        assert_eq!(degrade(&g, &p), degrade(&g, &p));
    }

    #[test]
    fn feature_layout() {
        let mut app = AppearanceGrid::filled(64, 64, [0.0; 3]);
        app.set(0, 0, [0.2, 0.4, 0.6]);
        let f = cell_features(&app, 0, 0, 0).unwrap();
        assert_eq!(f, vec![0.2f32 as f64, 0.4f32 as f64, 0.6f32 as f64, 0.0, 0.0]);

        let ones = AppearanceGrid::filled(8, 8, [1.0; 3]);
        let corner = cell_features(&ones, 0, 0, 1).unwrap();
        let zero_slots = corner[..27].chunks(3).filter(|s| s.iter().all(|&v| v == 0.0)).count();
        assert_eq!(zero_slots, 5);

        let uniform = AppearanceGrid::filled(9, 9, [0.3; 3]);
        let centre = cell_features(&uniform, 4, 4, 1).unwrap();
        assert!(centre[..27].iter().all(|&v| v == 0.3f32 as f64));
        assert_eq!(centre.len(), feature_dim(1));
        assert!(cell_features(&uniform, 9, 0, 1).is_err());
    }

    #[test]
    fn zero_model_loss_is_ln_classes() {
        let m = PerceiverModel::zeros(1);
        let batch = vec![(vec![0.5; feature_dim(1)], ClassId::Road), (vec![0.1; feature_dim(1)], ClassId::Pedestrian)];
        let (loss, _) = loss_and_grad(&m, &batch).unwrap();
        assert!((loss - (8f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_gives_same_loss_and_gradient() {
        let m = PerceiverModel::seeded(1, 5);
        let mut r = rng(9);
        let batch: Vec<_> = (0..7)
            .map(|i| ((0..feature_dim(1)).map(|_| r.random::<f64>()).collect(), ClassId::ALL[i % 8]))
            .collect();
        let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
        let (l1, g1) = loss_and_grad(&m, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&m, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.weights.iter().zip(&g2.weights) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_rejects_bad_batches() {
        let m = PerceiverModel::zeros(0);
        assert!(loss_and_grad(&m, &[]).is_err());
        let bad = vec![(vec![f64::NAN, 0.0, 0.0, 0.0, 0.0], ClassId::Road)];
        assert!(matches!(loss_and_grad(&m, &bad), Err(PerceptionError::Input(_))));
    }

    #[test]
    fn biased_model_predicts_road_everywhere() {
        let mut m = PerceiverModel::zeros(1);
        m.bias[ClassId::Road.index()] = 10.0;
        let app = AppearanceGrid::filled(5, 7, [0.9, 0.1, 0.4]);
        assert_eq!(predict(&m, &app), SemanticGrid::filled(5, 7, ClassId::Road));
        // all-zero model ties everywhere: void wins
        assert_eq!(predict(&PerceiverModel::zeros(1), &app), SemanticGrid::filled(5, 7, ClassId::Void));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = PerceiverModel::seeded(1, 1);
        let x: Vec<f64> = (0..feature_dim(1)).map(|i| i as f64 * 0.37).collect();
        let p = m.probabilities(&x);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn model_blob_round_trip() {
        let m = PerceiverModel::seeded(1, 42);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], b"AEYE-PM1");
        assert_eq!(PerceiverModel::from_bytes(&bytes).unwrap(), m);
        assert!(PerceiverModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(PerceiverModel::from_bytes(b"NOPE").is_err());
    }

    #[test]
    fn poly_schedule_is_non_increasing() {
        let cfg = TrainConfig::default();
        let lrs: Vec<f64> = (0..=100).map(|t| cfg.learning_rate(t, 100)).collect();
        assert_eq!(lrs[0], cfg.lr0);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(lrs[100], 0.0);
    }
}
