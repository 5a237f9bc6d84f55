//! Run directories: output files plus a manifest with input and output hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use drcal_core::protocol::RoundRecord;
use drcal_core::{IterationRecord, Matrix};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::io::{fmt_f64, sha256_file, sha256_hex};
use crate::plot::{line_chart, Series};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub config: Value,
    pub seed: u64,
    /// Input path (or `builtin:<name>`) → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file relative to the run directory → sha256.
    pub outputs: BTreeMap<String, String>,
    pub duration_s: f64,
}

/// Collects outputs under one directory and hashes everything it writes.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, Error> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root, started: Instant::now(), inputs: BTreeMap::new(), outputs: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn input_file(&mut self, path: &Path) -> Result<(), Error> {
        let h = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    /// Records a built-in case by the hash of its canonical JSON.
    pub fn input_case(&mut self, spec: &str, case: &drcal_core::NetworkCase) -> Result<(), Error> {
        if crate::io::BUILTIN_CASES.contains(&spec) {
            self.inputs.insert(format!("builtin:{spec}"), builtin_hash(case));
            Ok(())
        } else {
            self.input_file(Path::new(spec))
        }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Error> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(self, command: Vec<String>, config: Value, seed: u64) -> Result<RunManifest, Error> {
        let m = RunManifest {
            tool: "drcal".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }
}

fn builtin_hash(case: &drcal_core::NetworkCase) -> String {
    sha256_hex(case.to_description().to_json_pretty().as_bytes())
}

/// Re-hashes the inputs and outputs of a run directory. Returns the entries
/// whose hash no longer matches (or whose file is gone).
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, Error> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut bad = Vec::new();
    for (name, want) in &m.inputs {
        let got = match name.strip_prefix("builtin:") {
            Some(spec) => crate::io::load_case(spec).ok().map(|c| builtin_hash(&c)),
            None => sha256_file(Path::new(name)).ok(),
        };
        if got.as_deref() != Some(want.as_str()) {
            bad.push(name.clone());
        }
    }
    for (name, want) in &m.outputs {
        if sha256_file(&dir.join(name)).ok().as_deref() != Some(want.as_str()) {
            bad.push(name.clone());
        }
    }
    Ok(bad)
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn theta_columns(nf: usize, nw: usize) -> Vec<String> {
    (1..=nw).flat_map(|j| (1..=nf).map(move |f| format!("theta_w{j}_x{f}"))).collect()
}

/// Farm-major flattening matching [`theta_columns`].
pub fn theta_flat(theta: &Matrix) -> Vec<f64> {
    (0..theta.cols()).flat_map(|j| theta.col(j)).collect()
}

fn loss_header(nw: usize) -> Vec<String> {
    ["iter", "mse", "task1", "task2", "total"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=nw).map(|j| format!("eps_{j}")))
        .collect()
}

/// `iter, mse, task1, task2, total, eps_1..W, theta_w1_x1..`.
pub fn trajectory_csv(records: &[IterationRecord], nf: usize, nw: usize) -> Vec<u8> {
    let mut header = loss_header(nw);
    header.extend(theta_columns(nf, nw));
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![r.iter.to_string()];
            row.extend([r.loss.mse, r.loss.task1, r.loss.task2, r.loss.total].map(fmt_f64));
            row.extend(r.epsilon.iter().map(|v| fmt_f64(*v)));
            row.extend(theta_flat(&r.theta).into_iter().map(fmt_f64));
            row
        })
        .collect();
    csv_bytes(header, rows)
}

/// Operator-side trajectory: no parameters, only losses and radii.
pub fn rounds_csv(records: &[RoundRecord], nw: usize) -> Vec<u8> {
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![r.iter.to_string()];
            row.extend([r.loss.mse, r.loss.task1, r.loss.task2, r.loss.total].map(fmt_f64));
            row.extend(r.epsilon.iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    csv_bytes(loss_header(nw), rows)
}

pub fn loss_svg(iters: &[usize], losses: &[drcal_core::LossBreakdown], eta: f64) -> String {
    let pts = |f: &dyn Fn(&drcal_core::LossBreakdown) -> f64| {
        iters.iter().zip(losses).map(|(i, l)| (*i as f64, f(l))).collect::<Vec<_>>()
    };
    line_chart(
        "Calibration loss",
        "iteration",
        "loss",
        &[
            Series { name: "total".into(), points: pts(&|l| l.total) },
            Series { name: "task1".into(), points: pts(&|l| l.task1) },
            Series { name: "task2".into(), points: pts(&|l| l.task2) },
            Series { name: "eta*mse".into(), points: pts(&|l| eta * l.mse) },
        ],
    )
}

pub fn epsilon_svg(iters: &[usize], eps: &[Vec<f64>]) -> String {
    let nw = eps.first().map_or(0, |e| e.len());
    let series: Vec<Series> = (0..nw)
        .map(|j| Series {
            name: format!("eps_{}", j + 1),
            points: iters.iter().zip(eps).map(|(i, e)| (*i as f64, e[j])).collect(),
        })
        .collect();
    line_chart("Ambiguity radius", "iteration", "epsilon", &series)
}
