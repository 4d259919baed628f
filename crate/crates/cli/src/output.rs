//! CSV and manifest writers. Every file is written to a sibling temporary
//! and renamed into place.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fluxlod::schemes::{EstimateStatus, StepRecord};
use fluxlod::analysis::StabilityCertificate;
use serde::Serialize;

use crate::error::CliError;

/// A homogeneous CSV row type.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Streams `records` into `path` with a header row and LF line endings.
/// Returns the number of data rows.
pub fn emit_csv<R: CsvRecord>(records: impl IntoIterator<Item = R>, path: &Path) -> Result<usize, CliError> {
    let tmp = temp_path(path);
    let file = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| CliError::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    w.write_record(R::HEADER).map_err(wrap)?;
    let mut rows = 0;
    for r in records {
        w.write_record(r.fields()).map_err(wrap)?;
        rows += 1;
    }
    let inner = w.into_inner().map_err(|e| CliError::io(&tmp, e.into_error()))?;
    inner
        .into_inner()
        .map_err(|e| CliError::io(&tmp, e.into_error()))?
        .sync_all()
        .map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
    Ok(rows)
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<(), CliError> {
    let tmp = temp_path(path);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    let mut f = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRow(pub StepRecord);

impl CsvRecord for StepRow {
    const HEADER: &'static [&'static str] = &["n", "t", "norm", "rhs_norm", "estimate_satisfied", "solver_iters"];

    fn fields(&self) -> Vec<String> {
        let r = &self.0;
        vec![
            r.n.to_string(),
            fmt_float(r.t),
            fmt_opt(r.norm),
            fmt_opt(r.rhs_norm),
            r.estimate.as_str().to_string(),
            r.solver.iterations.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h_or_tau: f64,
    pub error: f64,
    pub slope_running: Option<f64>,
}

impl CsvRecord for ConvergenceRow {
    const HEADER: &'static [&'static str] = &["level", "h_or_tau", "error", "slope_running"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.level.to_string(),
            fmt_float(self.h_or_tau),
            fmt_float(self.error),
            fmt_opt(self.slope_running),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRow(pub StabilityCertificate);

impl CsvRecord for StabilityRow {
    const HEADER: &'static [&'static str] = &["sigma", "tau", "norm_T", "B_spd"];

    fn fields(&self) -> Vec<String> {
        let c = &self.0;
        vec![fmt_float(c.sigma), fmt_float(c.tau), fmt_opt(c.norm_t), c.b_spd.to_string()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub tau: f64,
    pub steps: usize,
    pub final_norm: Option<f64>,
    pub max_norm: Option<f64>,
    pub violations: usize,
    pub undefined: usize,
}

impl SweepRow {
    pub fn from_records(sigma: f64, tau: f64, initial: Option<f64>, records: &[StepRecord]) -> Self {
        let norms = records.iter().filter_map(|r| r.norm);
        let max_norm = initial.into_iter().chain(norms).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        Self {
            sigma,
            tau,
            steps: records.len(),
            final_norm: records.last().and_then(|r| r.norm),
            max_norm,
            violations: records.iter().filter(|r| r.estimate == EstimateStatus::Violated).count(),
            undefined: records.iter().filter(|r| r.estimate == EstimateStatus::Undefined).count(),
        }
    }
}

impl CsvRecord for SweepRow {
    const HEADER: &'static [&'static str] = &["sigma", "tau", "steps", "final_norm", "max_norm", "violations", "undefined"];

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_float(self.sigma),
            fmt_float(self.tau),
            self.steps.to_string(),
            fmt_opt(self.final_norm),
            fmt_opt(self.max_norm),
            self.violations.to_string(),
            self.undefined.to_string(),
        ]
    }
}
