//! CSV and JSON writers for runs, traces and reports.
//!
//! Floats use the shortest representation that round-trips, so identical
//! inputs give byte-identical files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::graph_flow::{MonitorReport, Snapshot};

/// Version of the CSV and JSON layouts written by this module.
pub const SCHEMA_VERSION: u32 = 1;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Rows `(t, x, f)` for every snapshot.
pub fn write_snapshots(path: &Path, xs: &[f64], snaps: &[Snapshot]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "f"])?;
    for s in snaps {
        for (x, f) in xs.iter().zip(&s.f) {
            w.serialize((s.t, x, f))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per monitor report.
pub fn write_monitor(path: &Path, reports: &[MonitorReport]) -> Result<()> {
    write_rows(path, reports)
}

/// One row per serializable record, with headers taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `(t, idx, x, y)` for a sequence of polylines.
pub fn write_curves(path: &Path, curves: &[(f64, Vec<[f64; 2]>)]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "idx", "x", "y"])?;
    for (t, pts) in curves {
        for (i, p) in pts.iter().enumerate() {
            w.serialize((t, i, p[0], p[1]))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `(branch, θ, r, x, y)` for traced level curves.
pub fn write_traced(path: &Path, branches: &[(&str, &[[f64; 2]])]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["branch", "theta", "r", "x", "y"])?;
    for (name, pts) in branches {
        for p in pts.iter() {
            w.serialize((name, p[1].atan2(p[0]), p[0].hypot(p[1]), p[0], p[1]))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/snap.csv");
        let snaps = vec![
            Snapshot {
                t: 0.0,
                f: vec![1.0, 2.5],
            },
            Snapshot {
                t: 0.1,
                f: vec![1.0, 2.25],
            },
        ];
        write_snapshots(&p, &[1.0, 2.0], &snaps).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "t,x,f\n0.0,1.0,1.0\n0.0,2.0,2.5\n0.1,1.0,1.0\n0.1,2.0,2.25\n"
        );
    }
}
