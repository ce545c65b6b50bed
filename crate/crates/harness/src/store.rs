//! Append-only JSONL record store.
//!
//! Records are appended one cell at a time: every record of a cell goes out
//! in a single write, each carrying `item` and `cell_size`. On resume a torn
//! trailing line or an incomplete trailing cell is cut off.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use flipscope_core::BinarySequence;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cell {
    Generation { p: f64 },
    Judgment { concept: BinarySequence, n: usize },
    Curve { concept: BinarySequence, n: usize, depth: usize },
}

impl Cell {
    /// Stable identifier, also used in file names.
    pub fn key(&self) -> String {
        match self {
            Cell::Generation { p } => format!("p={p}"),
            Cell::Judgment { concept, n } => format!("{concept}^{n}"),
            Cell::Curve { concept, n, depth } => format!("{concept}^{n}_d{depth}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Kept but suspect: too few parsed flips, or a sampled readout.
    Flagged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub cell: Cell,
    pub item: usize,
    pub cell_size: usize,
    pub status: Status,
    /// Cache keys of the completions behind this record.
    #[serde(default)]
    pub request_hashes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<BinarySequence>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl RunRecord {
    pub fn new(config_digest: &str, cell: &Cell, item: usize, cell_size: usize, status: Status) -> Self {
        Self {
            config_digest: config_digest.to_string(),
            cell: cell.clone(),
            item,
            cell_size,
            status,
            request_hashes: Vec::new(),
            sequence: None,
            values: BTreeMap::new(),
            method: None,
            tree_file: None,
            note: None,
        }
    }

    pub fn failed(config_digest: &str, cell: &Cell, note: impl Into<String>) -> Self {
        let mut r = Self::new(config_digest, cell, 0, 1, Status::Failed);
        r.note = Some(note.into());
        r
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

/// A complete cell as found in the store.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBatch {
    pub cell: Cell,
    pub records: Vec<RunRecord>,
}

impl CellBatch {
    pub fn failed(&self) -> bool {
        self.records.iter().any(|r| r.status == Status::Failed)
    }
}

struct Scan {
    batches: Vec<CellBatch>,
    /// Byte length of the valid prefix.
    valid_len: u64,
}

fn scan(bytes: &[u8]) -> Result<Scan> {
    let mut batches = Vec::new();
    let mut current: Vec<RunRecord> = Vec::new();
    let mut batch_start = 0usize;
    let mut valid_len = 0usize;
    let mut pos = 0usize;
    while let Some(nl) = bytes[pos..].iter().position(|b| *b == b'\n') {
        let line = &bytes[pos..pos + nl];
        let line_start = pos;
        pos += nl + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record: RunRecord = match serde_json::from_slice(line) {
            Ok(r) => r,
            // A torn write can only sit at the end.
            Err(e) if bytes[pos..].iter().all(u8::is_ascii_whitespace) => {
                log::warn!("dropping unreadable trailing record: {e}");
                break;
            }
            Err(e) => bail!("corrupt record at byte {line_start}: {e}"),
        };
        if current.is_empty() {
            batch_start = line_start;
        }
        let fits = current.is_empty()
            || (current[0].cell == record.cell
                && current[0].cell_size == record.cell_size
                && record.item == current.len());
        if !fits || record.item != current.len() {
            bail!("record at byte {line_start} breaks its cell batch");
        }
        current.push(record);
        if current.len() == current[0].cell_size {
            batches.push(CellBatch {
                cell: current[0].cell.clone(),
                records: std::mem::take(&mut current),
            });
            valid_len = pos;
        }
    }
    if !current.is_empty() {
        log::warn!(
            "dropping incomplete cell {} ({} of {} records)",
            current[0].cell.key(),
            current.len(),
            current[0].cell_size
        );
        valid_len = batch_start;
    }
    Ok(Scan {
        batches,
        valid_len: valid_len as u64,
    })
}

pub struct RecordStore {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordStore {
    /// Start an empty store, replacing any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    /// Open for appending after cutting any torn tail; returns the complete
    /// cells already present.
    pub fn resume(path: &Path) -> Result<(Self, Vec<CellBatch>)> {
        if !path.exists() {
            return Ok((Self::create(path)?, Vec::new()));
        }
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let scan = scan(&bytes)?;
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(scan.valid_len)?;
        file.sync_data()?;
        drop(file);
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            },
            scan.batches,
        ))
    }

    /// Complete cells in file order, read-only.
    pub fn load(path: &Path) -> Result<Vec<CellBatch>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(scan(&bytes)?.batches)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one cell's records in a single write.
    pub fn append(&self, records: &[RunRecord]) -> io::Result<()> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&buf)?;
        file.flush()?;
        file.sync_data()
    }
}

/// Latest complete batch per cell key.
pub fn latest_by_cell(batches: Vec<CellBatch>) -> BTreeMap<String, CellBatch> {
    let mut out = BTreeMap::new();
    for b in batches {
        out.insert(b.cell.key(), b);
    }
    out
}
