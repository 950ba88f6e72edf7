//! Files written under `--out-dir`: CSV trajectories, the `u` sidecar, JSON
//! reports and `run-manifest.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use signadam_core::optimizer::{TrajectoryRow, UDump};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};

pub const MANIFEST: &str = "run-manifest.json";

/// One trajectory CSV row; the column order is the file's header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub step: u64,
    pub loss: f64,
    pub grad_l1: f64,
    pub grad_l2: f64,
    pub update_l2: f64,
    pub u_min: f64,
    pub u_mean: f64,
    pub u_max: f64,
}

impl From<&TrajectoryRow> for CsvRow {
    fn from(r: &TrajectoryRow) -> Self {
        CsvRow {
            step: r.step,
            loss: r.loss,
            grad_l1: r.grad_l1,
            grad_l2: r.grad_l2,
            update_l2: r.update_l2,
            u_min: r.u_min,
            u_mean: r.u_mean,
            u_max: r.u_max,
        }
    }
}

/// Sidecar row: coordinate `j` of `u` at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct UDumpRow {
    step: u64,
    j: usize,
    u: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> LabError {
    LabError::Parse { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    write_csv(path, rows.iter().map(CsvRow::from))
}

pub fn write_u_dump(path: &Path, dumps: &[UDump]) -> Result<()> {
    write_csv(
        path,
        dumps.iter().flat_map(|dump| dump.u.iter().enumerate().map(move |(j, &u)| UDumpRow { step: dump.step, j, u })),
    )
}

pub fn read_trajectory(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Groups sidecar rows back into per-step vectors. Coordinates must appear
/// in order `0..d` within each step.
pub fn read_u_dump(path: &Path) -> Result<Vec<UDump>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: Vec<UDump> = Vec::new();
    for row in r.deserialize::<UDumpRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        match out.last_mut() {
            Some(last) if last.step == row.step && row.j == last.u.len() => last.u.push(row.u),
            _ if row.j == 0 => out.push(UDump { step: row.step, u: vec![row.u] }),
            _ => {
                return Err(LabError::Parse {
                    path: path.to_path_buf(),
                    message: format!("coordinate {} of step {} is out of order", row.j, row.step),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| LabError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| LabError::io(path, e))
}

/// Provenance for everything in one output directory. Carries no
/// timestamps or thread counts so reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_name: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub passed: bool,
}

impl Manifest {
    pub fn new(subcommand: &str, cfg: Option<&ExperimentConfig>, seed: u64) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config_name: cfg.map(|c| c.name.clone()).unwrap_or_default(),
            config_hash: cfg.map(|c| c.hash()).unwrap_or_default(),
            seed,
            outputs: Vec::new(),
            passed: true,
        }
    }
}

/// Output directory that records what was written into it.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| LabError::io(root, e))?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)
    }

    pub fn finish(mut self, mut manifest: Manifest) -> Result<PathBuf> {
        self.written.sort();
        manifest.outputs = self.written;
        let p = self.root.join(MANIFEST);
        write_json(&p, &manifest)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("signadam-output-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn u_dump_round_trips() {
        let dir = tmp("udump");
        let dumps = vec![UDump { step: 0, u: vec![0.5, 1.0] }, UDump { step: 10, u: vec![0.25, 0.125] }];
        let p = dir.join("u.csv");
        write_u_dump(&p, &dumps).unwrap();
        assert_eq!(read_u_dump(&p).unwrap(), dumps);
        fs::write(&p, "step,j,u\n0,1,0.5\n").unwrap();
        assert!(read_u_dump(&p).is_err());
    }

    #[test]
    fn trajectory_header_and_rows() {
        let dir = tmp("traj");
        let row = TrajectoryRow {
            step: 0,
            loss: 1.5,
            grad_l1: 2.0,
            grad_l2: 1.0,
            update_l2: 0.1,
            u_min: 0.5,
            u_mean: 0.75,
            u_max: 1.0,
            u_grad_l1: 0.0,
            noisy_grad_l2: 0.0,
        };
        let p = dir.join("t.csv");
        write_trajectory(&p, &[row, TrajectoryRow { step: 1, ..row }]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,loss,grad_l1,grad_l2,update_l2,u_min,u_mean,u_max");
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_trajectory(&p).unwrap()[1], CsvRow::from(&TrajectoryRow { step: 1, ..row }));
    }
}
