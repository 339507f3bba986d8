//! Output files. Sweeps become one CSV row per grid point with a fixed
//! column order; every file is accompanied by a JSON manifest that echoes
//! the resolved configuration, its hash and the seed.
//!
//! Sweep CSV columns: `experiment, n, gamma, theta, t, metric, value,
//! standard_error, abs_error`. Vector-valued cells hold space-separated
//! entries; absent values are empty cells.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::Result;
use crate::experiments::SweepReport;
use crate::montecarlo::fmt_float;

pub const SWEEP_COLUMNS: [&str; 9] = ["experiment", "n", "gamma", "theta", "t", "metric", "value", "standard_error", "abs_error"];

fn vector_cell(v: Option<&DVector<f64>>) -> String {
    v.map(|v| v.iter().map(|&x| fmt_float(x)).collect::<Vec<_>>().join(" ")).unwrap_or_default()
}

pub fn write_sweep_csv(report: &SweepReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_COLUMNS)?;
    for row in &report.rows {
        w.write_record([
            report.experiment.clone(),
            row.n.map(|n| n.to_string()).unwrap_or_default(),
            vector_cell(row.gamma.as_ref()),
            vector_cell(row.theta.as_ref()),
            vector_cell(Some(&row.t)),
            row.metric.clone(),
            fmt_float(row.value),
            fmt_float(row.standard_error),
            fmt_float(row.abs_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Manifest contents: command, configuration echo and hash, seed, the
/// payload and a timestamp (the only field that changes between re-runs).
pub fn manifest(command: &str, config: &RunConfig, payload: &impl Serialize) -> Result<Value> {
    Ok(json!({
        "command": command,
        "config": config.to_json()?,
        "config_sha256": config.hash()?,
        "seed": config.seed,
        "result": serde_json::to_value(payload)?,
        "generated_unix": timestamp(),
    }))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes `<dir>/<experiment>.csv` and `<dir>/<experiment>.manifest.json`.
pub fn write_sweep(dir: &Path, command: &str, config: &RunConfig, report: &SweepReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", report.experiment));
    write_sweep_csv(report, &csv_path)?;
    let payload = json!({
        "experiment": report.experiment,
        "master_seed": report.master_seed,
        "passed": report.passed(),
        "verdicts": report.verdicts,
        "notes": report.notes,
        "wall_clock_seconds": report.wall_clock_seconds,
        "csv_columns": SWEEP_COLUMNS,
    });
    let manifest_path = dir.join(format!("{}.manifest.json", report.experiment));
    write_json(&manifest_path, &manifest(command, config, &payload)?)?;
    Ok(vec![csv_path, manifest_path])
}

/// Writes `<dir>/<name>.json` holding a manifest around `payload`.
pub fn write_result(dir: &Path, name: &str, command: &str, config: &RunConfig, payload: &impl Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &manifest(command, config, payload)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{convergence_sweep, Context};
    use crate::fixtures::{Fixture, FixtureName};

    #[test]
    fn sweep_files_have_fixed_columns_and_echo_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture::builtin(FixtureName::P1);
        let r = convergence_sweep(&f, &DVector::zeros(1), &DVector::zeros(1), &[50, 200], &Context::new(2)).unwrap();
        let config = RunConfig::from_json_str(r#"{"fixture": {"builtin": "P1"}, "seed": 2}"#).unwrap();
        let paths = write_sweep(dir.path(), "sweep convergence", &config, &r).unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_COLUMNS.join(","));
        assert_eq!(lines.count(), r.rows.len());
        let m: Value = serde_json::from_str(&std::fs::read_to_string(&paths[1]).unwrap()).unwrap();
        assert_eq!(m["seed"], 2);
        assert_eq!(m["config"]["fixture"]["builtin"], "P1");
        assert_eq!(m["config_sha256"], config.hash().unwrap());
    }
}
