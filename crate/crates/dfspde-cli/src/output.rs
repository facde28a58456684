//! Data emission: CSV and JSON writers with byte-deterministic formatting.
//! Floats print with 17 significant digits so equal configurations produce
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use dfspde::diagnostics::ReportLine;
use dfspde::grid::SpatialGrid;
use dfspde::integrator::{EnsembleSummary, TrajectoryRecord};
use dfspde::mass_sde::ExtinctionVerdict;

use crate::config::RunConfig;

/// 17 significant digits, scientific notation.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:.16e}")
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Mass series: columns `replica,t,mass`.
pub fn write_mass_csv(path: &Path, replica: usize, record: &TrajectoryRecord) -> Result<()> {
    let mut out = String::from("replica,t,mass\n");
    for (t, m) in record.times.iter().zip(record.total_mass.iter()) {
        let _ = writeln!(out, "{replica},{},{}", fmt_sig(*t), fmt_sig(*m));
    }
    write_atomic(path, out.as_bytes())
}

/// Snapshot dump: columns `t,x,Y`.
pub fn write_snapshots_csv(path: &Path, grid: &SpatialGrid, record: &TrajectoryRecord) -> Result<()> {
    let mut out = String::from("t,x,Y\n");
    for snap in &record.snapshots {
        let t = snap.step as f64 * record.dt;
        for (i, y) in snap.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", fmt_sig(t), fmt_sig(grid.node(i)), fmt_sig(*y));
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Per-replica terminal statistics: `replica,terminal_mass,extinct,aborted`.
pub fn write_replicas_csv(path: &Path, summary: &EnsembleSummary) -> Result<()> {
    let mut out = String::from("replica,terminal_mass,extinct,aborted\n");
    for s in &summary.per_replica {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.replica,
            fmt_sig(s.terminal_mass),
            s.extinct,
            s.aborted
        );
    }
    write_atomic(path, out.as_bytes())
}

/// Extinction-scan verdicts:
/// `gamma_prime,replicas,extinct_fraction,se,mean_absorption_time,verdict`.
pub fn write_extinction_csv(path: &Path, verdicts: &[ExtinctionVerdict]) -> Result<()> {
    let mut out = String::from("gamma_prime,replicas,extinct_fraction,se,mean_absorption_time,verdict\n");
    for v in verdicts {
        let mean_t = v.mean_absorption_time.map(fmt_sig).unwrap_or_else(|| "nan".to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_sig(v.gamma_prime),
            v.replicas,
            fmt_sig(v.extinct_fraction),
            fmt_sig(v.se),
            mean_t,
            v.predicted.as_str()
        );
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing json")?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_report_jsonl(path: &Path, lines: &[ReportLine]) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&line.to_json());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Run provenance: config echo, content hash, effective seed.
#[derive(Debug, Serialize)]
pub struct RunMeta<'a> {
    pub command: &'a str,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: &'a RunConfig,
}

pub fn write_run_meta(path: &Path, meta: &RunMeta) -> Result<()> {
    write_json(path, meta)
}
