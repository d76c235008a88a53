//! CSV tables and the run manifest.
//!
//! Every CSV is a pure function of the resolved config: numbers are written
//! with Rust's shortest round-trip formatting and rows in a fixed order.
//! Wall-clock data goes to the manifest only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::covariance::CovarianceSpec;
use crate::error::{LabError, Result};

/// Formats a float for CSV output.
pub fn fmt_f(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (1e-4..1e9).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// An in-memory CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// One cell of a row.
pub enum Cell<'a> {
    F(f64),
    I(i64),
    S(&'a str),
}

impl From<f64> for Cell<'_> {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell<'_> {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl<'a> From<&'a str> for Cell<'a> {
    fn from(s: &'a str) -> Self {
        Cell::S(s)
    }
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<Cell<'_>>) {
        debug_assert_eq!(cells.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(
            cells
                .into_iter()
                .map(|c| match c {
                    Cell::F(x) => fmt_f(x),
                    Cell::I(i) => i.to_string(),
                    Cell::S(s) => s.to_string(),
                })
                .collect(),
        );
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(&self.name);
        std::fs::write(&path, self.render())
            .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// `y, C(y)` on the tabulation grid of the unit-scale covariance.
pub fn covariance_table(cov: &CovarianceSpec) -> Table {
    let mut t = Table::new("covariance.csv", &["y", "C(y)"]);
    for (y, c) in cov.table() {
        t.push(vec![y.into(), c.into()]);
    }
    t
}

/// File name for a field snapshot at time `t`.
pub fn field_file_name(t: f64) -> String {
    format!("field_t{}.csv", fmt_f(t))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub kind: String,
    pub crate_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<String>,
    pub failures: Vec<String>,
    pub config: String,
    pub extra: BTreeMap<String, String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| LabError::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
