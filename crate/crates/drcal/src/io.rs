//! Case files, dataset CSVs, parameter strings and hashing.

use std::fs;
use std::path::Path;

use drcal_core::{Dataset, DatasetRole, Matrix, NetworkCase};
use sha2::{Digest, Sha256};

use crate::error::Error;

/// Built-in case names accepted wherever a case path is.
pub const BUILTIN_CASES: [&str; 2] = ["case5", "case5_2w"];

/// Loads a case by built-in name or from a JSON file.
pub fn load_case(spec: &str) -> Result<NetworkCase, Error> {
    match spec {
        "case5" => Ok(NetworkCase::five_bus()),
        "case5_2w" => Ok(NetworkCase::five_bus_two_farms()),
        path => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            NetworkCase::from_json(&text).map_err(|e| Error::Input(format!("{path}: {e}")))
        }
    }
}

/// Writes `x1..xF, y1..yW` columns, one row per sample.
pub fn dataset_csv(data: &Dataset) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=data.n_features())
        .map(|f| format!("x{f}"))
        .chain((1..=data.n_wind()).map(|j| format!("y{j}")))
        .collect();
    w.write_record(&header).expect("in-memory write");
    for i in 0..data.len() {
        let row: Vec<String> =
            data.features.row(i).iter().chain(data.actuals.row(i)).map(|v| fmt_f64(*v)).collect();
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn read_dataset(path: &Path, role: DatasetRole) -> Result<Dataset, Error> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, role).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

pub fn parse_dataset(bytes: &[u8], role: DatasetRole) -> Result<Dataset, String> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    let nf = header.iter().take_while(|h| h.starts_with('x')).count();
    let nw = header.len() - nf;
    for (k, h) in header.iter().enumerate() {
        let want = if k < nf { format!("x{}", k + 1) } else { format!("y{}", k - nf + 1) };
        if h.trim() != want {
            return Err(format!("column {} is `{h}`, expected `{want}`", k + 1));
        }
    }
    if nf == 0 || nw == 0 {
        return Err("need at least one x and one y column".into());
    }
    let mut features = Vec::new();
    let mut actuals = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| format!("row {}: `{s}` is not a number", i + 1)))
            .collect::<Result<_, _>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(format!("row {}: non-finite value", i + 1));
        }
        features.push(vals[..nf].to_vec());
        actuals.push(vals[nf..].to_vec());
    }
    if features.is_empty() {
        return Err("no data rows".into());
    }
    let features = Matrix::from_rows(&features).expect("rectangular by csv");
    let actuals = Matrix::from_rows(&actuals).expect("rectangular by csv");
    Dataset::new(features, actuals, role).map_err(|e| e.to_string())
}

/// Parses `Θ` as farm columns separated by `;`, features by `,`:
/// `"1,2"` is one farm with two features, `"1,2;0.8,1.5"` two farms.
pub fn parse_theta(s: &str) -> Result<Matrix, Error> {
    let cols: Vec<Vec<f64>> = s
        .split(';')
        .map(|c| parse_list(c))
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Usage(format!("--theta0 `{s}`: {e}")))?;
    let nf = cols[0].len();
    if cols.iter().any(|c| c.len() != nf) {
        return Err(Error::Usage(format!("--theta0 `{s}`: farms have different feature counts")));
    }
    let mut m = Matrix::zeros(nf, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_col(j, c);
    }
    Ok(m)
}

/// `Θ` in the `parse_theta` format, round-trip exact.
pub fn format_theta(theta: &Matrix) -> String {
    (0..theta.cols())
        .map(|j| theta.col(j).iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

/// Comma-separated finite numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    let out: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", t.trim())))
        .collect::<Result<_, _>>()?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(out)
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| Error::io(path, e))
}

pub fn role_name(role: DatasetRole) -> &'static str {
    match role {
        DatasetRole::Uq => "uq",
        DatasetRole::Calibration => "calibration",
    }
}
