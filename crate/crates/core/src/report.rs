//! Tabular plot data, run reports and the exit-code contract.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One CSV cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    /// Locale-independent rendering; floats use 12-digit scientific form.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_nan() => "nan".into(),
            Cell::Float(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Float(x) => format!("{x:.12e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

/// A named table written as `<name>.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Dimension(format!(
                "table {}: row has {} cells, header {}",
                self.name,
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Comma-separated, LF-terminated bytes.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Writes one CSV per table into `dir`; returns the paths in table order.
pub fn emit_plot_data(tables: &[Table], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::with_capacity(tables.len());
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name));
        write_atomic(&path, &t.to_csv()?)?;
        out.push(path);
    }
    Ok(out)
}

/// Pass/fail of one checked property, tied to the invariant it instantiates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub invariant: String,
    pub passed: bool,
    pub detail: String,
}

impl InvariantCheck {
    pub fn new(name: &str, invariant: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), invariant: invariant.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: serde_json::Value,
    pub results: serde_json::Value,
    pub invariants: Vec<InvariantCheck>,
    pub timings: Vec<Timing>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InvariantCheck> {
        self.invariants.iter().filter(|c| !c.passed)
    }

    /// Writes `report.json` and every table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = emit_plot_data(&self.tables, dir)?;
        let path = dir.join("report.json");
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        paths.push(path);
        Ok(paths)
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

/// Process exit code for a finished or failed run.
pub fn exit_code(outcome: &Result<RunReport>) -> i32 {
    match outcome {
        Ok(r) if r.passed() => EXIT_OK,
        Ok(_) => EXIT_INVARIANT,
        Err(Error::NonConvergence { .. }) => EXIT_NONCONVERGENCE,
        Err(_) => EXIT_CONFIG,
    }
}
