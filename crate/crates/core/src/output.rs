//! Artifact emission: CSV tables, JSON reports, a run manifest with SHA-256
//! checksums, and small gnuplot scripts.
//!
//! Everything written here is deterministic — no timestamps, no map
//! iteration order leaks — so identical runs produce bit-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::field::ScalarField;
use crate::flow::Trajectory;
use crate::solver::Snapshots;

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects artifacts under one output directory and finishes with a
/// manifest listing their checksums next to the generating config.
pub struct OutputWriter {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl OutputWriter {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(OutputWriter { dir: dir.as_ref().to_path_buf(), artifacts: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut text = String::with_capacity(rows.len() * 64 + header.len() + 1);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    /// One CSV per snapshot (node indices, coordinates, value) plus a field
    /// CSV for the reference envelope when given.
    pub fn write_snapshots(&mut self, snapshots: &Snapshots, prefix: &str) -> Result<()> {
        for (k, field) in snapshots.fields.iter().enumerate() {
            let name = format!("{prefix}_{k:04}.csv");
            self.write_field(&name, field)?;
        }
        let times: Vec<Vec<String>> = snapshots
            .times
            .iter()
            .enumerate()
            .map(|(k, &t)| vec![k.to_string(), fmt_f64(t)])
            .collect();
        self.write_csv(&format!("{prefix}_times.csv"), "snapshot,t", &times)?;
        Ok(())
    }

    pub fn write_field(&mut self, name: &str, field: &ScalarField) -> Result<PathBuf> {
        let grid = &field.grid;
        let mut rows = Vec::with_capacity(grid.len());
        if grid.dim == 1 {
            for node in grid.nodes() {
                let x = grid.coord(node);
                rows.push(vec![node[0].to_string(), fmt_f64(x[0]), fmt_f64(field.value(node))]);
            }
            self.write_csv(name, "i,x,u", &rows)
        } else {
            for node in grid.nodes() {
                let x = grid.coord(node);
                rows.push(vec![
                    node[0].to_string(),
                    node[1].to_string(),
                    fmt_f64(x[0]),
                    fmt_f64(x[1]),
                    fmt_f64(field.value(node)),
                ]);
            }
            self.write_csv(name, "i,j,x,y,u", &rows)
        }
    }

    pub fn write_trajectory(&mut self, name: &str, traj: &Trajectory, dim: usize) -> Result<PathBuf> {
        let mut rows = Vec::with_capacity(traj.times.len());
        for k in 0..traj.times.len() {
            let mut row = vec![fmt_f64(traj.times[k])];
            for a in 0..dim {
                row.push(fmt_f64(traj.points[k][a]));
            }
            row.push(fmt_f64(traj.values_u0[k]));
            row.push(fmt_f64(traj.values_env[k]));
            row.push(fmt_f64(traj.grad_norms[k]));
            rows.push(row);
        }
        let header = if dim == 1 { "t,x,u0,env,grad_norm" } else { "t,x,y,u0,env,grad_norm" };
        self.write_csv(name, header, &rows)
    }

    pub fn write_error_series(
        &mut self,
        name: &str,
        times: &[f64],
        errors: &[f64],
    ) -> Result<PathBuf> {
        let rows: Vec<Vec<String>> = times
            .iter()
            .zip(errors)
            .map(|(&t, &e)| vec![fmt_f64(t), fmt_f64(e)])
            .collect();
        self.write_csv(name, "t,error", &rows)
    }

    /// Gnuplot script for a log-scale error-vs-time figure; references the
    /// CSV by relative path so the script is position-independent.
    pub fn write_rate_plot_script(&mut self, name: &str, csv_name: &str) -> Result<PathBuf> {
        let script = format!(
            "set datafile separator ','\n\
             set logscale y\n\
             set xlabel 't'\n\
             set ylabel 'sup error'\n\
             set key off\n\
             plot '{csv_name}' skip 1 using 1:2 with linespoints\n"
        );
        self.write_bytes(name, script.as_bytes())
    }

    /// Write `manifest.json`: the embedded config, its hash, and a checksum
    /// per artifact. Consumes the writer; nothing may be added afterwards.
    pub fn finish<T: Serialize>(mut self, config: &T) -> Result<PathBuf> {
        let config_value = serde_json::to_value(config)?;
        let config_hash = sha256_hex(serde_json::to_string(&config_value)?.as_bytes());
        #[derive(Serialize)]
        struct Manifest {
            config: serde_json::Value,
            config_sha256: String,
            artifacts: BTreeMap<String, String>,
        }
        let manifest =
            Manifest { config: config_value, config_sha256: config_hash, artifacts: self.artifacts.clone() };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text.as_bytes())?;
        self.artifacts.clear();
        Ok(path)
    }
}
