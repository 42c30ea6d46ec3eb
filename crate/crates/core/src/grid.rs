//! Ego-centric label and appearance grids.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const NUM_CLASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassId {
    Void = 0,
    Road = 1,
    Sidewalk = 2,
    Building = 3,
    Vegetation = 4,
    Vehicle = 5,
    Pedestrian = 6,
    TrafficLight = 7,
}

impl ClassId {
    pub const ALL: [ClassId; NUM_CLASSES] = [
        ClassId::Void,
        ClassId::Road,
        ClassId::Sidewalk,
        ClassId::Building,
        ClassId::Vegetation,
        ClassId::Vehicle,
        ClassId::Pedestrian,
        ClassId::TrafficLight,
    ];

    pub fn from_u8(id: u8) -> Option<ClassId> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Void => "void",
            ClassId::Road => "road",
            ClassId::Sidewalk => "sidewalk",
            ClassId::Building => "building",
            ClassId::Vegetation => "vegetation",
            ClassId::Vehicle => "vehicle",
            ClassId::Pedestrian => "pedestrian",
            ClassId::TrafficLight => "traffic_light",
        }
    }

    /// Object classes: the ones that form discrete blobs rather than scenery.
    pub fn is_object(self) -> bool {
        matches!(self, ClassId::Vehicle | ClassId::Pedestrian | ClassId::TrafficLight)
    }

    pub fn is_hazard(self) -> bool {
        matches!(self, ClassId::Vehicle | ClassId::Pedestrian)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("grid shape {rows}x{cols} does not match {len} cells")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("invalid class id {0} at cell {1}")]
    InvalidClass(u8, usize),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    Mismatch(usize, usize, usize, usize),
    #[error("cell ({row}, {col}) out of bounds for {rows}x{cols} grid")]
    OutOfBounds { row: usize, col: usize, rows: usize, cols: usize },
}

/// Row 0 is nearest to the ego vehicle, the last row farthest. Column 0 is the
/// leftmost lateral bin.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SemanticGrid {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl SemanticGrid {
    pub fn filled(rows: usize, cols: usize, class: ClassId) -> Self {
        Self { rows, cols, cells: vec![class as u8; rows * cols] }
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self, GridError> {
        if rows * cols != cells.len() || rows == 0 || cols == 0 {
            return Err(GridError::Shape { rows, cols, len: cells.len() });
        }
        if let Some((i, &c)) = cells.iter().enumerate().find(|(_, &c)| c as usize >= NUM_CLASSES) {
            return Err(GridError::InvalidClass(c, i));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn from_classes(rows: usize, cols: usize, classes: &[ClassId]) -> Result<Self, GridError> {
        Self::from_cells(rows, cols, classes.iter().map(|&c| c as u8).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Raw class ids, row-major.
    pub fn as_bytes(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> ClassId {
        ClassId::ALL[self.cells[row * self.cols + col] as usize]
    }

    pub fn at(&self, index: usize) -> ClassId {
        ClassId::ALL[self.cells[index] as usize]
    }

    pub fn set(&mut self, row: usize, col: usize, class: ClassId) {
        self.cells[row * self.cols + col] = class as u8;
    }

    pub fn set_at(&mut self, index: usize, class: ClassId) {
        self.cells[index] = class as u8;
    }

    pub fn iter(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.cells.iter().map(|&c| ClassId::ALL[c as usize])
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.cells.iter().filter(|&&c| c == class as u8).count()
    }

    pub fn histogram(&self) -> [u64; NUM_CLASSES] {
        let mut h = [0u64; NUM_CLASSES];
        for &c in &self.cells {
            h[c as usize] += 1;
        }
        h
    }

    pub fn check_same_shape(&self, other: &SemanticGrid) -> Result<(), GridError> {
        if self.shape() != other.shape() {
            return Err(GridError::Mismatch(self.rows, self.cols, other.rows, other.cols));
        }
        Ok(())
    }
}

/// Per-cell colour triple in `[0, 1]`, standing in for the camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceGrid {
    rows: usize,
    cols: usize,
    cells: Vec<[f32; 3]>,
}

impl AppearanceGrid {
    pub fn filled(rows: usize, cols: usize, value: [f32; 3]) -> Self {
        Self { rows, cols, cells: vec![clamp_rgb(value); rows * cols] }
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<[f32; 3]>) -> Result<Self, GridError> {
        if rows * cols != cells.len() || rows == 0 || cols == 0 {
            return Err(GridError::Shape { rows, cols, len: cells.len() });
        }
        Ok(Self { rows, cols, cells: cells.into_iter().map(clamp_rgb).collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        self.cells[row * self.cols + col]
    }

    pub fn cells(&self) -> &[[f32; 3]] {
        &self.cells
    }

    pub fn set(&mut self, row: usize, col: usize, value: [f32; 3]) {
        self.cells[row * self.cols + col] = clamp_rgb(value);
    }

    /// Little-endian f32 bytes, row-major, three values per cell.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cells.len() * 12);
        for cell in &self.cells {
            for v in cell {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_le_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self, GridError> {
        if bytes.len() != rows * cols * 12 {
            return Err(GridError::Shape { rows, cols, len: bytes.len() / 12 });
        }
        let cells = bytes
            .chunks_exact(12)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]);
                [f(0), f(4), f(8)]
            })
            .collect();
        Self::from_cells(rows, cols, cells)
    }
}

fn clamp_rgb(v: [f32; 3]) -> [f32; 3] {
    v.map(|x| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) })
}

/// Binary PGM (P5) encoding of a label grid: one byte per cell holding the class id.
pub fn encode_pgm(grid: &SemanticGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    out.extend_from_slice(&grid.cells);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("not a binary PGM: {0}")]
    Header(String),
    #[error("truncated PGM: expected {expected} cell bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn decode_pgm(bytes: &[u8]) -> Result<SemanticGrid, PgmError> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PgmError::Header("unexpected end of header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(PgmError::Header(format!("magic {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| PgmError::Header(format!("bad number {s:?}")));
    let cols = parse(&fields[1])?;
    let rows = parse(&fields[2])?;
    if parse(&fields[3])? != 255 {
        return Err(PgmError::Header("maxval must be 255".into()));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != rows * cols {
        return Err(PgmError::Truncated { expected: rows * cols, found: raster.len() });
    }
    Ok(SemanticGrid::from_cells(rows, cols, raster.to_vec())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_ids_are_contiguous_from_void() {
        for (i, c) in ClassId::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ClassId::from_u8(i as u8), Some(*c));
        }
        assert_eq!(ClassId::Void as u8, 0);
        assert_eq!(ClassId::from_u8(8), None);
    }

    #[test]
    fn rejects_bad_shapes_and_ids() {
        assert!(SemanticGrid::from_cells(2, 2, vec![0; 3]).is_err());
        assert_eq!(
            SemanticGrid::from_cells(1, 2, vec![0, 9]),
            Err(GridError::InvalidClass(9, 1))
        );
    }

    #[test]
    fn pgm_round_trip_and_truncation() {
        let g = SemanticGrid::from_cells(2, 3, vec![0, 1, 2, 3, 6, 7]).unwrap();
        let bytes = encode_pgm(&g);
        assert_eq!(decode_pgm(&bytes).unwrap(), g);
        let err = decode_pgm(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err, PgmError::Truncated { expected: 6, found: 5 });
    }

    #[test]
    fn appearance_bytes_round_trip_and_clamp() {
        let a = AppearanceGrid::from_cells(1, 2, vec![[0.25, 2.0, -1.0], [0.5, 0.125, 1.0]]).unwrap();
        assert_eq!(a.get(0, 0), [0.25, 1.0, 0.0]);
        let back = AppearanceGrid::from_le_bytes(1, 2, &a.to_le_bytes()).unwrap();
        assert_eq!(back, a);
    }
}
