//! On-disk records: one CSV per trajectory, a JSON sidecar with the parameter
//! sets, and the campaign metrics document.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::SimError;

use super::{Campaign, TrajectoryRecord};

/// Version of the metrics and comparison JSON layout.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

fn io_err(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Io(format!("{}: {e}", path.display()))
}

/// Column names for a record with the given dimensions.
///
/// Row `t` holds `x_t`, `u_t`, `w_t`, `theta_t`, the stage cost, `J*`, the
/// successor `x_{t+1}`, and 0/1 violation flags of the state rows at
/// `x_{t+1}` and the input rows at `u_t`.
pub fn trajectory_csv_header(n: usize, m: usize, p: usize, state_rows: usize, input_rows: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    let mut push = |prefix: &str, k: usize| cols.extend((0..k).map(|i| format!("{prefix}{i}")));
    push("x", n);
    push("u", m);
    push("w", n);
    push("theta", p);
    cols.push("stage_cost".into());
    cols.push("j_star".into());
    let mut push = |prefix: &str, k: usize| cols.extend((0..k).map(|i| format!("{prefix}{i}")));
    push("x_next", n);
    push("viol_x", state_rows);
    push("viol_u", input_rows);
    cols
}

pub fn write_trajectory_csv(rec: &TrajectoryRecord, path: &Path) -> Result<(), SimError> {
    let n = rec.states[0].len();
    let m = rec.inputs.first().map_or(0, |u| u.len());
    let p = rec.offsets[0].len();
    let sr = rec.state_violations.first().map_or(0, Vec::len);
    let ir = rec.input_violations.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(trajectory_csv_header(n, m, p, sr, ir)).map_err(|e| io_err(path, e))?;
    let flag = |b: &bool| if *b { "1".to_string() } else { "0".to_string() };
    for t in 0..rec.steps() {
        let mut row = vec![t.to_string()];
        row.extend(rec.states[t].iter().map(f64::to_string));
        row.extend(rec.inputs[t].iter().map(f64::to_string));
        row.extend(rec.noise[t].iter().map(f64::to_string));
        row.extend(rec.offsets[t].iter().map(f64::to_string));
        row.push(rec.stage_costs[t].to_string());
        row.push(rec.j_star[t].to_string());
        row.extend(rec.states[t + 1].iter().map(f64::to_string));
        row.extend(rec.state_violations[t].iter().map(flag));
        row.extend(rec.input_violations[t].iter().map(flag));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Parameter sets `Theta_0, ..., Theta_T` as row-major normals and offsets.
pub fn write_fps_sidecar(rec: &TrajectoryRecord, path: &Path) -> Result<(), SimError> {
    let json = serde_json::to_string_pretty(&rec.fps).map_err(|e| io_err(path, e))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

/// Writes `metrics.json`, `trajectory_<i>.csv`, and `fps_<i>.json` into `dir`
/// and returns the metrics path.
pub fn write_campaign(campaign: &Campaign, dir: &Path) -> Result<PathBuf, SimError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for rec in &campaign.records {
        write_trajectory_csv(rec, &dir.join(format!("trajectory_{:03}.csv", rec.trajectory)))?;
        write_fps_sidecar(rec, &dir.join(format!("fps_{:03}.json", rec.trajectory)))?;
    }
    let path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&campaign.metrics).map_err(|e| io_err(&path, e))?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(path)
}
