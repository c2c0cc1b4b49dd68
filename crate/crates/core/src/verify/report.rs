//! Experiment reports: JSON for machines, aligned text for people, CSV for
//! plotting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use super::stats::LineFit;
use crate::error::{Error, Result};

/// One grid point of an experiment with its named estimates.
#[derive(Clone, Debug, Serialize)]
pub struct Cell {
    pub label: String,
    pub values: BTreeMap<String, f64>,
}

impl Cell {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }

    pub fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub observed: f64,
    /// Accepted range or relation, in words.
    pub expected: String,
    /// Theoretical reference value, when there is one.
    pub theory: Option<f64>,
    pub passed: bool,
}

impl Verdict {
    pub fn within(name: &str, observed: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            observed,
            expected: format!("[{lo}, {hi}]"),
            theory: None,
            passed: observed >= lo && observed <= hi,
        }
    }

    pub fn at_most(name: &str, observed: f64, limit: f64) -> Self {
        Self {
            name: name.to_string(),
            observed,
            expected: format!("<= {limit}"),
            theory: None,
            passed: observed <= limit,
        }
    }

    pub fn at_least(name: &str, observed: f64, limit: f64) -> Self {
        Self {
            name: name.to_string(),
            observed,
            expected: format!(">= {limit}"),
            theory: None,
            passed: observed >= limit,
        }
    }

    /// `observed / theory ∈ [lo, hi]`.
    pub fn ratio(name: &str, observed: f64, theory: f64, lo: f64, hi: f64) -> Self {
        let ratio = observed / theory;
        Self {
            name: name.to_string(),
            observed,
            expected: format!("ratio to theory in [{lo}, {hi}]"),
            theory: Some(theory),
            passed: ratio >= lo && ratio <= hi,
        }
    }

    pub fn check(name: &str, observed: f64, expected: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.to_string(),
            observed,
            expected: expected.into(),
            theory: None,
            passed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub cells: Vec<Cell>,
    pub fits: Vec<LineFit>,
    pub verdicts: Vec<Verdict>,
    #[serde(skip)]
    pub wall_clock: Option<Duration>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            experiment: experiment.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config)?,
            cells: Vec::new(),
            fits: Vec::new(),
            verdicts: Vec::new(),
            wall_clock: None,
        })
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn cell(&self, label: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.label == label)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn fit(&self, name: &str) -> Option<&LineFit> {
        self.fits.iter().find(|f| f.name == name)
    }

    /// Appends the cells, fits and verdicts of `other` with its experiment
    /// name as a label prefix.
    pub fn absorb(&mut self, other: ExperimentReport) {
        let prefix = other.experiment;
        self.cells.extend(other.cells.into_iter().map(|mut c| {
            c.label = format!("{prefix}/{}", c.label);
            c
        }));
        self.fits.extend(other.fits.into_iter().map(|mut f| {
            f.name = format!("{prefix}/{}", f.name);
            f
        }));
        self.verdicts.extend(other.verdicts.into_iter().map(|mut v| {
            v.name = format!("{prefix}/{}", v.name);
            v
        }));
        if let (Some(a), Some(b)) = (self.wall_clock, other.wall_clock) {
            self.wall_clock = Some(a + b);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    fn columns(&self) -> Vec<String> {
        let keys: BTreeSet<&String> = self.cells.iter().flat_map(|c| c.values.keys()).collect();
        keys.into_iter().cloned().collect()
    }

    /// Aligned-column summary: cells, fits, then verdicts with theory and
    /// observed values side by side.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment {} (seed {})", self.experiment, self.seed);
        if !self.cells.is_empty() {
            let keys = self.columns();
            let mut rows = vec![std::iter::once("cell".to_string())
                .chain(keys.iter().cloned())
                .collect::<Vec<_>>()];
            for c in &self.cells {
                let mut row = vec![c.label.clone()];
                row.extend(keys.iter().map(|k| c.get(k).map_or("-".to_string(), fmt_num)));
                rows.push(row);
            }
            write_table(&mut out, &rows);
        }
        if !self.fits.is_empty() {
            let mut rows = vec![vec![
                "fit".to_string(),
                "slope".into(),
                "95% interval".into(),
                "points".into(),
            ]];
            for f in &self.fits {
                rows.push(vec![
                    f.name.clone(),
                    fmt_num(f.slope),
                    format!("[{}, {}]", fmt_num(f.slope_ci[0]), fmt_num(f.slope_ci[1])),
                    f.points.to_string(),
                ]);
            }
            write_table(&mut out, &rows);
        }
        if !self.verdicts.is_empty() {
            let mut rows = vec![vec![
                "check".to_string(),
                "theory".into(),
                "observed".into(),
                "ratio".into(),
                "accepted".into(),
                "result".into(),
            ]];
            for v in &self.verdicts {
                rows.push(vec![
                    v.name.clone(),
                    v.theory.map_or("-".to_string(), fmt_num),
                    fmt_num(v.observed),
                    v.theory.map_or("-".to_string(), |t| fmt_num(v.observed / t)),
                    v.expected.clone(),
                    if v.passed { "pass".into() } else { "FAIL".into() },
                ]);
            }
            write_table(&mut out, &rows);
        }
        out
    }

    /// One CSV row per cell; missing values are left empty.
    pub fn cells_csv(&self) -> Result<String> {
        let keys = self.columns();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("cell").chain(keys.iter().map(String::as_str)))?;
        for c in &self.cells {
            let mut record = vec![c.label.clone()];
            record.extend(
                keys.iter()
                    .map(|k| c.get(k).map_or(String::new(), |v| format!("{v:e}"))),
            );
            w.write_record(&record)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_cells_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.cells_csv()?)?;
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    if x == 0.0 || (1e-3..1e5).contains(&x.abs()) {
        format!("{x:.4}")
    } else {
        format!("{x:.3e}")
    }
}

fn write_table(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| {
            rows.iter()
                .filter_map(|r| r.get(j))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, s)| format!("{s:<width$}", width = widths[j]))
            .collect();
        let _ = writeln!(out, "  {}", line.join("  ").trim_end());
    }
    out.push('\n');
}
