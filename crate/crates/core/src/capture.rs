//! Rolling frame buffer and intervention-triggered corner-case records.
//!
//! On disk a record lives in `<root>/<id>/`:
//!
//! ```text
//! manifest.json          format "aeye-cc/1": event, odometry, shapes, fps, per-frame metadata
//! frames/NNN.truth.pgm   8-bit class ids
//! frames/NNN.pred.pgm
//! frames/NNN.app.bin     little-endian f32, row-major, 3 per cell
//! ```
//!
//! `<root>/manifest.json` indexes every record id under the root.

use crate::arbitration::{ControlCommand, InterventionEvent};
use crate::grid::{decode_pgm, encode_pgm, AppearanceGrid, SemanticGrid};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::thread;
use thiserror::Error;

pub const CAPTURE_FPS: u32 = 10;
pub const CAPTURE_SECONDS: u32 = 3;
pub const RECORD_FORMAT: &str = "aeye-cc/1";
pub const INDEX_FORMAT: &str = "aeye-cc-index/1";

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("sequencing error: tick {got} does not follow {last}")]
    Sequencing { last: u64, got: u64 },
    #[error("buffer holds {have} of {need} frames; no record produced")]
    Underfull { have: usize, need: usize },
    #[error("storage error: {0}")]
    Storage(String),
    #[error("format error in {}: {reason}", file.display())]
    Format { file: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub tick_index: u64,
    /// Simulated seconds.
    pub timestamp: f64,
    pub truth: SemanticGrid,
    pub predicted: SemanticGrid,
    pub appearance: AppearanceGrid,
    pub ego_speed_kmh: f64,
    pub effective_cmd: ControlCommand,
}

#[derive(Debug, Clone)]
pub struct RollingBuffer {
    capacity: usize,
    entries: VecDeque<FrameRecord>,
}

impl RollingBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity + 1) }
    }

    pub fn with_rate(fps: u32, seconds: u32) -> Self {
        Self::new((fps * seconds) as usize)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &FrameRecord> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Append a frame, evicting the oldest once over capacity.
    pub fn push(&mut self, frame: FrameRecord) -> Result<(), CaptureError> {
        if let Some(last) = self.entries.back() {
            if frame.tick_index <= last.tick_index || frame.timestamp <= last.timestamp {
                return Err(CaptureError::Sequencing { last: last.tick_index, got: frame.tick_index });
            }
        }
        self.entries.push_back(frame);
        if self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Copy the buffer into a record and clear it. An underfull buffer yields
    /// an error and is left untouched.
    pub fn snapshot(&mut self, id: impl Into<String>, event: InterventionEvent, fps: u32, ride_minutes: f64) -> Result<CornerCaseRecord, CaptureError> {
        if !self.is_full() || self.capacity == 0 {
            return Err(CaptureError::Underfull { have: self.entries.len(), need: self.capacity });
        }
        let frames: Vec<FrameRecord> = self.entries.drain(..).collect();
        Ok(CornerCaseRecord {
            id: id.into(),
            km_driven_at_event: event.odometer_km,
            ride_duration_at_event: ride_minutes,
            fps,
            frames,
            event,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerCaseRecord {
    pub id: String,
    pub frames: Vec<FrameRecord>,
    pub event: InterventionEvent,
    pub km_driven_at_event: f64,
    /// Minutes.
    pub ride_duration_at_event: f64,
    pub fps: u32,
}

impl CornerCaseRecord {
    /// Simulated seconds between the first and last frame.
    pub fn span_seconds(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames.first().map(|f| f.truth.shape()).unwrap_or((0, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameMeta {
    index: usize,
    tick_index: u64,
    timestamp: f64,
    ego_speed_kmh: f64,
    effective_cmd: ControlCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordManifest {
    format: String,
    id: String,
    fps: u32,
    rows: usize,
    cols: usize,
    event: InterventionEvent,
    km_driven_at_event: f64,
    ride_duration_at_event_min: f64,
    frames: Vec<FrameMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RootIndex {
    format: String,
    records: Vec<String>,
}

// serialises index rewrites from concurrent persisters in this process
static INDEX_LOCK: Mutex<()> = Mutex::new(());

fn io_err(path: &Path, e: std::io::Error) -> CaptureError {
    CaptureError::Storage(format!("{}: {e}", path.display()))
}

fn frame_paths(dir: &Path, i: usize) -> [PathBuf; 3] {
    let f = dir.join("frames");
    [
        f.join(format!("{i:03}.truth.pgm")),
        f.join(format!("{i:03}.pred.pgm")),
        f.join(format!("{i:03}.app.bin")),
    ]
}

pub fn record_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

/// Write a record under `root`. Fails if a record with the same id exists.
pub fn persist(record: &CornerCaseRecord, root: &Path) -> Result<PathBuf, CaptureError> {
    if record.id.is_empty() || record.id.contains(['/', '\\']) || record.id.starts_with('.') {
        return Err(CaptureError::Storage(format!("invalid record id {:?}", record.id)));
    }
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let dir = record_dir(root, &record.id);
    match fs::create_dir(&dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(CaptureError::Storage(format!("record id {:?} already exists", record.id)));
        }
        Err(e) => return Err(io_err(&dir, e)),
    }
    let frames_dir = dir.join("frames");
    fs::create_dir(&frames_dir).map_err(|e| io_err(&frames_dir, e))?;
    let (rows, cols) = record.shape();
    let mut metas = Vec::with_capacity(record.frames.len());
    for (i, f) in record.frames.iter().enumerate() {
        let [t, p, a] = frame_paths(&dir, i);
        fs::write(&t, encode_pgm(&f.truth)).map_err(|e| io_err(&t, e))?;
        fs::write(&p, encode_pgm(&f.predicted)).map_err(|e| io_err(&p, e))?;
        fs::write(&a, f.appearance.to_le_bytes()).map_err(|e| io_err(&a, e))?;
        metas.push(FrameMeta {
            index: i,
            tick_index: f.tick_index,
            timestamp: f.timestamp,
            ego_speed_kmh: f.ego_speed_kmh,
            effective_cmd: f.effective_cmd,
        });
    }
    let manifest = RecordManifest {
        format: RECORD_FORMAT.into(),
        id: record.id.clone(),
        fps: record.fps,
        rows,
        cols,
        event: record.event.clone(),
        km_driven_at_event: record.km_driven_at_event,
        ride_duration_at_event_min: record.ride_duration_at_event,
        frames: metas,
    };
    let mpath = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    fs::write(&mpath, json).map_err(|e| io_err(&mpath, e))?;
    update_index(root)?;
    Ok(dir)
}

fn update_index(root: &Path) -> Result<(), CaptureError> {
    let _guard = INDEX_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let records = scan_record_ids(root)?;
    let index = RootIndex { format: INDEX_FORMAT.into(), records };
    let tmp = root.join(".manifest.json.tmp");
    let path = root.join("manifest.json");
    fs::write(&tmp, serde_json::to_vec_pretty(&index).expect("index serialises")).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
}

fn scan_record_ids(root: &Path) -> Result<Vec<String>, CaptureError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let entry = entry.map_err(|e| io_err(root, e))?;
        if entry.path().join("manifest.json").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Ids listed in `<root>/manifest.json`.
pub fn list_records(root: &Path) -> Result<Vec<String>, CaptureError> {
    let path = root.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let index: RootIndex = serde_json::from_slice(&bytes)
        .map_err(|e| CaptureError::Format { file: path.clone(), reason: e.to_string() })?;
    if index.format != INDEX_FORMAT {
        return Err(CaptureError::Format { file: path, reason: format!("unknown format {:?}", index.format) });
    }
    Ok(index.records)
}

pub fn load(root: &Path, id: &str) -> Result<CornerCaseRecord, CaptureError> {
    load_dir(&record_dir(root, id))
}

pub fn load_dir(dir: &Path) -> Result<CornerCaseRecord, CaptureError> {
    let mpath = dir.join("manifest.json");
    let bytes = fs::read(&mpath).map_err(|e| CaptureError::Format { file: mpath.clone(), reason: e.to_string() })?;
    let m: RecordManifest = serde_json::from_slice(&bytes)
        .map_err(|e| CaptureError::Format { file: mpath.clone(), reason: e.to_string() })?;
    if m.format != RECORD_FORMAT {
        return Err(CaptureError::Format { file: mpath, reason: format!("unknown format {:?}", m.format) });
    }
    let mut frames = Vec::with_capacity(m.frames.len());
    for meta in &m.frames {
        let [t, p, a] = frame_paths(dir, meta.index);
        let read = |path: &Path| fs::read(path).map_err(|e| CaptureError::Format { file: path.to_path_buf(), reason: e.to_string() });
        let grid = |path: &Path| -> Result<SemanticGrid, CaptureError> {
            let g = decode_pgm(&read(path)?).map_err(|e| CaptureError::Format { file: path.to_path_buf(), reason: e.to_string() })?;
            if g.shape() != (m.rows, m.cols) {
                return Err(CaptureError::Format { file: path.to_path_buf(), reason: "grid shape disagrees with manifest".into() });
            }
            Ok(g)
        };
        let truth = grid(&t)?;
        let predicted = grid(&p)?;
        let appearance = AppearanceGrid::from_le_bytes(m.rows, m.cols, &read(&a)?)
            .map_err(|e| CaptureError::Format { file: a.clone(), reason: e.to_string() })?;
        frames.push(FrameRecord {
            tick_index: meta.tick_index,
            timestamp: meta.timestamp,
            truth,
            predicted,
            appearance,
            ego_speed_kmh: meta.ego_speed_kmh,
            effective_cmd: meta.effective_cmd,
        });
    }
    Ok(CornerCaseRecord {
        id: m.id,
        frames,
        event: m.event,
        km_driven_at_event: m.km_driven_at_event,
        ride_duration_at_event: m.ride_duration_at_event_min,
        fps: m.fps,
    })
}

/// Load every record listed in the root index, in index order.
pub fn load_all(root: &Path) -> Result<Vec<CornerCaseRecord>, CaptureError> {
    list_records(root)?.iter().map(|id| load(root, id)).collect()
}

/// Background writer fed with finished records.
pub struct Persister {
    tx: Option<mpsc::Sender<CornerCaseRecord>>,
    handle: Option<thread::JoinHandle<Result<Vec<PathBuf>, CaptureError>>>,
}

impl Persister {
    pub fn spawn(root: PathBuf) -> Self {
        let (tx, rx) = mpsc::channel::<CornerCaseRecord>();
        let handle = thread::spawn(move || {
            let mut written = Vec::new();
            for record in rx {
                written.push(persist(&record, &root)?);
            }
            Ok(written)
        });
        Self { tx: Some(tx), handle: Some(handle) }
    }

    pub fn submit(&self, record: CornerCaseRecord) -> Result<(), CaptureError> {
        self.tx
            .as_ref()
            .expect("persister running")
            .send(record)
            .map_err(|_| CaptureError::Storage("persister stopped".into()))
    }

    /// Flush outstanding records and return the directories written.
    pub fn finish(mut self) -> Result<Vec<PathBuf>, CaptureError> {
        drop(self.tx.take());
        self.handle
            .take()
            .expect("persister running")
            .join()
            .map_err(|_| CaptureError::Storage("persister thread panicked".into()))?
    }
}

impl Drop for Persister {
    fn drop(&mut self) {
        drop(self.tx.take());
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
