//! Design Structure Matrix value type, ground-truth fixtures and (de)serialization.
//!
//! A [`Dsm`] is a labeled square grid of ternary cells. Construction validates
//! squareness, the cell alphabet `{0, 1, 2}`, the unit diagonal and label
//! uniqueness, so every `Dsm` in circulation is well formed.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Raw integer grid as produced by parsers or read from files.
pub type Grid = Vec<Vec<u8>>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DsmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("illegal cell value {value} at ({row}, {col})")]
    IllegalCellValue { row: usize, col: usize, value: i64 },
    #[error("diagonal cell ({0}, {0}) is not 1")]
    DiagonalNotOne(usize),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("empty label at position {0}")]
    EmptyLabel(usize),
    #[error("invalid size {0}")]
    InvalidSize(usize),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unknown ground truth {0:?}")]
    UnknownGroundTruth(String),
    #[error("io: {0}")]
    Io(String),
}

/// One DSM cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellValue {
    Absent,
    Present,
    Unsure,
}

impl CellValue {
    pub fn as_u8(self) -> u8 {
        match self {
            CellValue::Absent => 0,
            CellValue::Present => 1,
            CellValue::Unsure => 2,
        }
    }

    pub fn from_int(v: i64) -> Option<Self> {
        match v {
            0 => Some(CellValue::Absent),
            1 => Some(CellValue::Present),
            2 => Some(CellValue::Unsure),
            _ => None,
        }
    }
}

/// Canonical form used whenever two component names are compared:
/// NFC, trimmed, lowercased.
pub fn normalize_label(label: &str) -> String {
    label.nfc().collect::<String>().trim().to_lowercase()
}

/// A validated, labeled DSM. Cells are stored row-major as `u8` in `{0,1,2}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dsm {
    labels: Vec<String>,
    cells: Grid,
}

impl Dsm {
    /// Validates and builds a DSM.
    pub fn new(labels: Vec<String>, cells: Vec<Vec<i64>>) -> Result<Self, DsmError> {
        let n = labels.len();
        if cells.len() != n {
            return Err(DsmError::DimensionMismatch(format!(
                "{} labels but {} rows",
                n,
                cells.len()
            )));
        }
        let mut grid = Vec::with_capacity(n);
        for (i, row) in cells.iter().enumerate() {
            if row.len() != n {
                return Err(DsmError::DimensionMismatch(format!(
                    "row {} has {} cells, expected {}",
                    i,
                    row.len(),
                    n
                )));
            }
            let mut out = Vec::with_capacity(n);
            for (j, &v) in row.iter().enumerate() {
                let cell = CellValue::from_int(v)
                    .ok_or(DsmError::IllegalCellValue { row: i, col: j, value: v })?;
                out.push(cell.as_u8());
            }
            grid.push(out);
        }
        Self::from_grid(labels, grid)
    }

    /// Same as [`Dsm::new`] for an already-narrowed grid.
    pub fn from_grid(labels: Vec<String>, cells: Grid) -> Result<Self, DsmError> {
        let n = labels.len();
        if cells.len() != n || cells.iter().any(|r| r.len() != n) {
            return Err(DsmError::DimensionMismatch(format!(
                "grid is not {n}x{n}"
            )));
        }
        for (i, row) in cells.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > 2 {
                    return Err(DsmError::IllegalCellValue { row: i, col: j, value: v as i64 });
                }
            }
            if row[i] != 1 {
                return Err(DsmError::DiagonalNotOne(i));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, l) in labels.iter().enumerate() {
            let norm = normalize_label(l);
            if norm.is_empty() {
                return Err(DsmError::EmptyLabel(i));
            }
            if !seen.insert(norm) {
                return Err(DsmError::DuplicateLabel(l.clone()));
            }
        }
        Ok(Dsm { labels, cells })
    }

    /// Unlabeled grid; labels are generated as `C1..Cn`.
    pub fn unlabeled(cells: Grid) -> Result<Self, DsmError> {
        let labels = (1..=cells.len()).map(|i| format!("C{i}")).collect();
        Self::from_grid(labels, cells)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn cells(&self) -> &Grid {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> CellValue {
        CellValue::from_int(self.cells[i][j] as i64).expect("validated cell")
    }

    pub fn contains_unsure(&self) -> bool {
        self.cells.iter().flatten().any(|&c| c == 2)
    }

    /// Sub-matrix over `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dsm {
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        let cells = indices
            .iter()
            .map(|&i| indices.iter().map(|&j| self.cells[i][j]).collect())
            .collect();
        Dsm { labels, cells }
    }

    /// Position of a label, compared in normalized form.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        let norm = normalize_label(label);
        self.labels.iter().position(|l| normalize_label(l) == norm)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dsm serializes")
    }

    pub fn from_json(payload: &str) -> Result<Self, DsmError> {
        #[derive(Deserialize)]
        struct Raw {
            labels: Vec<String>,
            cells: Vec<Vec<i64>>,
        }
        let raw: Raw = serde_json::from_str(payload)
            .map_err(|e| DsmError::MalformedPayload(e.to_string()))?;
        Dsm::new(raw.labels, raw.cells)
    }

    /// CSV with a header row and a header column of labels; the corner cell is empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (label, row) in self.labels.iter().zip(&self.cells) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Labels are kept verbatim; cells may carry surrounding whitespace.
    pub fn from_csv(payload: &str) -> Result<Self, DsmError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(payload.as_bytes());
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| DsmError::MalformedPayload("empty csv".into()))?
            .map_err(|e| DsmError::MalformedPayload(e.to_string()))?;
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut cells = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| DsmError::MalformedPayload(e.to_string()))?;
            let mut it = rec.iter();
            row_labels.push(it.next().unwrap_or_default().to_string());
            let row = it
                .map(|s| {
                    s.trim()
                        .parse::<i64>()
                        .map_err(|_| DsmError::MalformedPayload(format!("non-integer cell {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            cells.push(row);
        }
        if row_labels.len() != labels.len()
            || row_labels
                .iter()
                .zip(&labels)
                .any(|(a, b)| normalize_label(a) != normalize_label(b))
        {
            return Err(DsmError::MalformedPayload(
                "row labels do not match column labels".into(),
            ));
        }
        Dsm::new(labels, cells)
    }
}

impl<'de> Deserialize<'de> for Dsm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            labels: Vec<String>,
            cells: Vec<Vec<i64>>,
        }
        let raw = Raw::deserialize(d)?;
        Dsm::new(raw.labels, raw.cells).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Dsm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_grid(&self.cells))
    }
}

/// Renders a grid in the `[[1, 0],[0, 1]]` list-of-lists form used in prompts.
pub fn render_grid(cells: &Grid) -> String {
    let rows: Vec<String> = cells
        .iter()
        .map(|r| {
            let vals: Vec<String> = r.iter().map(|c| c.to_string()).collect();
            format!("[{}]", vals.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(","))
}

/// Diagonal of ones, every other cell unsure.
pub fn worst_case_dsm(n: usize) -> Result<Dsm, DsmError> {
    if n == 0 {
        return Err(DsmError::InvalidSize(0));
    }
    let cells = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1 } else { 2 }).collect())
        .collect();
    Dsm::unlabeled(cells)
}

/// Diagonal of ones, every other cell absent.
pub fn identity_grid(n: usize) -> Grid {
    (0..n)
        .map(|i| (0..n).map(|j| u8::from(i == j)).collect())
        .collect()
}

/// A reference DSM with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub name: String,
    pub relationship_type: String,
    pub source_note: String,
    pub dsm: Dsm,
}

const SCREWDRIVER_JSON: &str = include_str!("../fixtures/screwdriver.json");
const CUBESAT_JSON: &str = include_str!("../fixtures/cubesat.json");

impl GroundTruthSet {
    pub fn from_json(payload: &str) -> Result<Self, DsmError> {
        let gt: GroundTruthSet = serde_json::from_str(payload)
            .map_err(|e| DsmError::MalformedPayload(e.to_string()))?;
        if gt.relationship_type.trim().is_empty() {
            return Err(DsmError::MalformedPayload("empty relationship_type".into()));
        }
        Ok(gt)
    }

    /// Names of the fixtures compiled into the crate.
    pub fn builtin_ids() -> &'static [&'static str] {
        &["screwdriver", "cubesat"]
    }

    pub fn builtin(id: &str) -> Result<Self, DsmError> {
        match id {
            "screwdriver" => Self::from_json(SCREWDRIVER_JSON),
            "cubesat" => Self::from_json(CUBESAT_JSON),
            other => Err(DsmError::UnknownGroundTruth(other.to_string())),
        }
    }

    /// A builtin id, or a path to a ground-truth JSON file.
    pub fn resolve(id_or_path: &str, base: Option<&Path>) -> Result<Self, DsmError> {
        if let Ok(gt) = Self::builtin(id_or_path) {
            return Ok(gt);
        }
        let path = match base {
            Some(b) => b.join(id_or_path),
            None => id_or_path.into(),
        };
        let payload = std::fs::read_to_string(&path)
            .map_err(|_| DsmError::UnknownGroundTruth(id_or_path.to_string()))?;
        Self::from_json(&payload)
    }
}
