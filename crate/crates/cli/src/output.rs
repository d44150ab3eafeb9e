//! CSV files written by the experiment runner.
//!
//! Numbers are written with 17 significant digits; unavailable values are
//! empty cells.

use std::path::Path;

use anyhow::{Context, Result};
use rsgda::solvers::{RunRecord, Trace};

pub const TRACE_COLUMNS: [&str; 11] = [
    "iter",
    "alpha_k",
    "eta_k",
    "step_kind",
    "grad_phi_norm_sq",
    "surrogate_grad_norm_sq",
    "phi",
    "D_k",
    "r_k",
    "E_k",
    "wall_time_s",
];

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "point",
    "sweep",
    "seed",
    "algorithm",
    "status",
    "final_phi",
    "best_grad_phi_norm_sq",
    "diverged",
    "iterations",
    "wall_time_s",
    "trace_file",
    "error",
];

pub const VERDICT_COLUMNS: [&str; 4] = ["check", "pass", "slack", "seed"];

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// One trace row in [`TRACE_COLUMNS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub alpha_k: f64,
    pub eta_k: Option<f64>,
    pub step_kind: String,
    pub grad_phi_norm_sq: Option<f64>,
    pub surrogate_grad_norm_sq: Option<f64>,
    pub phi: Option<f64>,
    pub d_k: Option<f64>,
    pub r_k: Option<f64>,
    pub e_k: Option<f64>,
    pub wall_time_s: f64,
}

impl From<&RunRecord> for TraceRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            iter: r.iter,
            alpha_k: r.alpha_k,
            eta_k: Some(r.eta_k),
            step_kind: r.step_kind.as_str().to_string(),
            grad_phi_norm_sq: r.grad_phi_norm_sq,
            surrogate_grad_norm_sq: r.surrogate_grad_norm_sq,
            phi: r.phi,
            d_k: r.d_k,
            r_k: r.r_k,
            e_k: r.e_k,
            wall_time_s: r.wall_time_s,
        }
    }
}

impl TraceRow {
    fn fields(&self) -> [String; 11] {
        [
            self.iter.to_string(),
            num(self.alpha_k),
            opt(self.eta_k),
            self.step_kind.clone(),
            opt(self.grad_phi_norm_sq),
            opt(self.surrogate_grad_norm_sq),
            opt(self.phi),
            opt(self.d_k),
            opt(self.r_k),
            opt(self.e_k),
            format!("{:.6}", self.wall_time_s),
        ]
    }
}

pub fn trace_rows(trace: &Trace) -> Vec<TraceRow> {
    trace.records.iter().map(TraceRow::from).collect()
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(TRACE_COLUMNS)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `header` and `rows` to `path`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(iter, grad_phi_norm_sq)` pairs from a trace CSV, skipping rows
/// where the gradient norm is unavailable.
pub fn read_grad_series(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: no `{name}` column", path.display()))
    };
    let (ic, gc) = (col("iter")?, col("grad_phi_norm_sq")?);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let g = &rec[gc];
        if g.is_empty() {
            continue;
        }
        let parse_err = || format!("{}: line {}", path.display(), line + 2);
        out.push((rec[ic].parse::<usize>().with_context(parse_err)?, g.parse::<f64>().with_context(parse_err)?));
    }
    Ok(out)
}
