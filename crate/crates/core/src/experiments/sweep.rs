use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{PfnError, Result};
use crate::loss_metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    Failed,
}

impl CellStatus {
    fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Command-specific leading columns.
    pub fields: Vec<String>,
    /// Human-readable cell descriptor.
    pub cell: String,
    pub config_hash: String,
    pub status: CellStatus,
    pub error: String,
    pub wall_ms: f64,
    pub metrics: Option<MetricsReport>,
}

/// Table of sweep cells with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub columns: Vec<String>,
    pub rows: Vec<SweepRow>,
}

const COMMON: [&str; 5] = ["cell", "config_hash", "status", "error", "wall_ms"];
const METRICS: [&str; 8] = ["rel", "sq_rel", "rms", "rms_log", "delta1", "delta2", "delta3", "n_valid"];

impl SweepResult {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn header(&self) -> Vec<String> {
        self.columns
            .iter()
            .cloned()
            .chain(COMMON.iter().map(|s| s.to_string()))
            .chain(METRICS.iter().map(|s| s.to_string()))
            .collect()
    }

    fn record(row: &SweepRow) -> Vec<String> {
        let mut r = row.fields.clone();
        r.extend([
            row.cell.clone(),
            row.config_hash.clone(),
            row.status.as_str().to_string(),
            row.error.clone(),
            row.wall_ms.to_string(),
        ]);
        match &row.metrics {
            Some(m) => {
                r.extend(m.field_values().iter().map(|v| v.to_string()));
                r.push(m.n_valid.to_string());
            }
            None => r.extend(std::iter::repeat_n(String::new(), METRICS.len())),
        }
        r
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(self.header())?;
        for row in &self.rows {
            w.write_record(Self::record(row))?;
        }
        let bytes = w.into_inner().map_err(|e| PfnError::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| PfnError::io(path, e))
    }

    /// Reads a file written by [`SweepResult::write_csv`] with the same leading columns.
    pub fn read_csv(path: impl AsRef<Path>, columns: &[&str]) -> Result<Self> {
        let path = path.as_ref();
        let mut out = Self::new(columns);
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if header != out.header() {
            return Err(PfnError::Format {
                path: path.to_path_buf(),
                message: format!("unexpected sweep header {header:?}"),
            });
        }
        let n = columns.len();
        for rec in rdr.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).unwrap_or("").to_string();
            let num = |i: usize| -> Result<f64> {
                get(i).parse().map_err(|_| PfnError::Format {
                    path: path.to_path_buf(),
                    message: format!("bad number {:?} in column {}", get(i), i),
                })
            };
            let status = if get(n + 2) == "ok" {
                CellStatus::Ok
            } else {
                CellStatus::Failed
            };
            let m = n + COMMON.len();
            let metrics = if get(m).is_empty() {
                None
            } else {
                Some(MetricsReport {
                    rel: num(m)?,
                    sq_rel: num(m + 1)?,
                    rms: num(m + 2)?,
                    rms_log: num(m + 3)?,
                    delta1: num(m + 4)?,
                    delta2: num(m + 5)?,
                    delta3: num(m + 6)?,
                    n_valid: num(m + 7)? as usize,
                })
            };
            out.rows.push(SweepRow {
                fields: (0..n).map(get).collect(),
                cell: get(n),
                config_hash: get(n + 1),
                status,
                error: get(n + 3),
                wall_ms: num(n + 4)?,
                metrics,
            });
        }
        Ok(out)
    }

    pub fn completed(&self, hash: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.config_hash == hash && r.status == CellStatus::Ok)
    }

    pub fn by_field(&self, column: &str, value: &str) -> Option<&SweepRow> {
        let i = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|r| r.fields[i] == value)
    }
}

/// Hex SHA-256 of a cell's JSON description.
pub fn cell_hash(descriptor: &impl Serialize) -> String {
    let json = serde_json::to_vec(descriptor).expect("descriptor serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Incrementally written sweep that skips cells already completed in `path`.
pub struct ResumableSweep {
    path: Option<PathBuf>,
    previous: Option<SweepResult>,
    pub result: SweepResult,
}

impl ResumableSweep {
    pub fn open(path: Option<PathBuf>, columns: &[&str]) -> Result<Self> {
        let previous = match &path {
            Some(p) if p.exists() => Some(SweepResult::read_csv(p, columns)?),
            _ => None,
        };
        Ok(Self {
            path,
            previous,
            result: SweepResult::new(columns),
        })
    }

    /// Runs `cell` unless a completed row with `hash` exists; failures are
    /// recorded and the sweep continues.
    /// Whether a previous run already finished the cell with this hash.
    pub fn is_completed(&self, hash: &str) -> bool {
        self.previous.as_ref().is_some_and(|p| p.completed(hash).is_some())
    }

    pub fn run_cell(
        &mut self,
        fields: Vec<String>,
        cell: String,
        hash: String,
        run: impl FnOnce() -> Result<(Option<MetricsReport>, f64)>,
    ) -> Result<()> {
        if let Some(done) = self.previous.as_ref().and_then(|p| p.completed(&hash)) {
            log::info!("skipping completed cell {cell}");
            self.result.rows.push(done.clone());
            return self.flush();
        }
        let start = std::time::Instant::now();
        let row = match run() {
            Ok((metrics, wall_ms)) => SweepRow {
                fields,
                cell,
                config_hash: hash,
                status: CellStatus::Ok,
                error: String::new(),
                wall_ms,
                metrics,
            },
            Err(e) => {
                log::warn!("cell {cell} failed: {e}");
                SweepRow {
                    fields,
                    cell,
                    config_hash: hash,
                    status: CellStatus::Failed,
                    error: e.to_string(),
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    metrics: None,
                }
            }
        };
        self.result.rows.push(row);
        self.flush()
    }

    pub fn flush(&self) -> Result<()> {
        match &self.path {
            Some(p) => self.result.write_csv(p),
            None => Ok(()),
        }
    }

    pub fn finish(self) -> SweepResult {
        self.result
    }
}
