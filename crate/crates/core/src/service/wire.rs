//! `aeye-wire/1`: JSON messages, one per websocket text frame. Every message
//! carries the schema version and a per-connection sequence number. Grids
//! travel as base64 of their row-major cell bytes.

use crate::arbitration::{ControlCommand, InterventionCause};
use crate::capture::CornerCaseRecord;
use crate::grid::{AppearanceGrid, SemanticGrid};
use crate::world::LightPhase;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WIRE_VERSION: &str = "aeye-wire/1";

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0:?}")]
    Version(String),
    #[error("bad grid payload: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Semantic,
    Safety,
}

impl Role {
    pub const BOTH: [Role; 2] = [Role::Semantic, Role::Safety];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub rows: usize,
    pub cols: usize,
    /// What the semantic driver sees: the perceived class grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_view: Option<String>,
    /// What the safety driver sees: the ground-truth class grid...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clear_view: Option<String>,
    /// ...and the rendered colours, 3 bytes per cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clear_rgb: Option<String>,
    pub speed_kmh: f64,
    pub light_phase: Option<LightPhase>,
    #[serde(default)]
    pub replay: bool,
}

impl StateFrame {
    pub fn new(tick: u64, truth: &SemanticGrid, predicted: &SemanticGrid, appearance: &AppearanceGrid, speed_kmh: f64, light_phase: Option<LightPhase>) -> Self {
        Self {
            tick,
            rows: truth.rows(),
            cols: truth.cols(),
            semantic_view: Some(encode_grid(predicted)),
            clear_view: Some(encode_grid(truth)),
            clear_rgb: Some(encode_rgb(appearance)),
            speed_kmh,
            light_phase,
            replay: false,
        }
    }

    /// Strip the channel the role must not see.
    pub fn for_role(&self, role: Role) -> Self {
        let mut f = self.clone();
        match role {
            Role::Semantic => {
                f.clear_view = None;
                f.clear_rgb = None;
            }
            Role::Safety => f.semantic_view = None,
        }
        f
    }

    pub fn semantic_grid(&self) -> Result<Option<SemanticGrid>, WireError> {
        self.semantic_view.as_deref().map(|s| decode_grid(s, self.rows, self.cols)).transpose()
    }

    pub fn clear_grid(&self) -> Result<Option<SemanticGrid>, WireError> {
        self.clear_view.as_deref().map(|s| decode_grid(s, self.rows, self.cols)).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Started,
    CcCaptured { id: String },
    Labeled { id: String, cause: InterventionCause },
    Paused { reason: String },
    Resumed,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    StateFrame(StateFrame),
    ControlInput { role: Role, cmd: ControlCommand },
    InterventionLabel { cause: InterventionCause, #[serde(default)] comment: String },
    SessionEvent(SessionEvent),
    ClaimRole { role: Role },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: String,
    pub seq: u64,
    #[serde(flatten)]
    pub msg: WireMessage,
}

pub fn encode(seq: u64, msg: &WireMessage) -> String {
    serde_json::to_string(&Envelope { v: WIRE_VERSION.into(), seq, msg: msg.clone() }).expect("message serialises")
}

pub fn decode(text: &str) -> Result<Envelope, WireError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))?;
    match value.get("v").and_then(|v| v.as_str()) {
        Some(WIRE_VERSION) => {}
        Some(other) => return Err(WireError::Version(other.into())),
        None => return Err(WireError::Malformed("missing \"v\"".into())),
    }
    serde_json::from_value(value).map_err(|e| WireError::Malformed(e.to_string()))
}

pub fn encode_grid(grid: &SemanticGrid) -> String {
    B64.encode(grid.as_bytes())
}

pub fn decode_grid(text: &str, rows: usize, cols: usize) -> Result<SemanticGrid, WireError> {
    let bytes = B64.decode(text).map_err(|e| WireError::Grid(e.to_string()))?;
    SemanticGrid::from_cells(rows, cols, bytes).map_err(|e| WireError::Grid(e.to_string()))
}

pub fn encode_rgb(app: &AppearanceGrid) -> String {
    let bytes: Vec<u8> = app.cells().iter().flat_map(|c| c.map(|v| (v * 255.0).round() as u8)).collect();
    B64.encode(bytes)
}

/// Frames of a recorded corner case, oldest first, without stepping a world.
pub fn replay(record: &CornerCaseRecord) -> Vec<StateFrame> {
    record
        .frames
        .iter()
        .map(|f| StateFrame {
            replay: true,
            ..StateFrame::new(f.tick_index, &f.truth, &f.predicted, &f.appearance, f.ego_speed_kmh, None)
        })
        .collect()
}
