//! Grids of calibration runs over `σ_c` and `η`.

use drcal_core::{
    calibrate, gen_synthetic_dataset, CalibrationConfig, CalibrationError, CalibrationState, Dataset, DatasetRole,
    Matrix, NetworkCase, SyntheticSpec,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exec::Parallel;
use crate::io::fmt_f64;
use crate::run::{theta_columns, theta_flat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every calibration set uses the same seed, so all `σ_c` share the
    /// same standard-normal draws and features.
    Shared,
    /// The k-th `σ_c` uses `seed + 1 + k`.
    Offset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub theta0: Matrix,
    pub eps0: Vec<f64>,
    pub sigma_c: Vec<f64>,
    pub eta: Vec<f64>,
    pub n_uq: usize,
    pub n_cal: usize,
    pub sigma_uq: f64,
    pub seed: u64,
    pub seed_policy: SeedPolicy,
    /// `eta` in here is replaced per grid point.
    pub config: CalibrationConfig,
}

impl SweepSpec {
    pub fn uq_seed(&self) -> u64 {
        self.seed
    }

    pub fn cal_seed(&self, sigma_index: usize) -> u64 {
        match self.seed_policy {
            SeedPolicy::Shared => self.seed + 1,
            SeedPolicy::Offset => self.seed + 1 + sigma_index as u64,
        }
    }

    /// `(σ_c index, η)` in row-major order: σ_c outer, η inner.
    pub fn grid(&self) -> Vec<(usize, f64)> {
        (0..self.sigma_c.len()).flat_map(|k| self.eta.iter().map(move |e| (k, *e))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Infeasible,
    Numerical,
    Error,
}

impl PointStatus {
    pub fn name(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Infeasible => "infeasible",
            PointStatus::Numerical => "numerical",
            PointStatus::Error => "error",
        }
    }

    fn of(e: &CalibrationError) -> Self {
        if e.is_infeasible() {
            PointStatus::Infeasible
        } else if e.is_numerical() {
            PointStatus::Numerical
        } else {
            PointStatus::Error
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub index: usize,
    pub sigma_c: f64,
    pub eta: f64,
    pub cal_seed: u64,
    pub status: PointStatus,
    pub detail: String,
    pub state: Option<CalibrationState>,
}

impl SweepPoint {
    /// Directory name of this point's run inside the sweep output.
    pub fn dir_name(&self) -> String {
        format!("point_{:02}", self.index)
    }
}

pub fn uq_dataset(spec: &SweepSpec, case: &NetworkCase) -> Result<Dataset, String> {
    let s = SyntheticSpec::new(spec.theta0.clone(), spec.n_uq, spec.sigma_uq, spec.uq_seed(), DatasetRole::Uq, case.wind_capacity.clone());
    gen_synthetic_dataset(&s).map_err(|e| e.to_string())
}

pub fn cal_dataset(spec: &SweepSpec, case: &NetworkCase, sigma_index: usize) -> Result<Dataset, String> {
    let s = SyntheticSpec::new(
        spec.theta0.clone(),
        spec.n_cal,
        spec.sigma_c[sigma_index],
        spec.cal_seed(sigma_index),
        DatasetRole::Calibration,
        case.wind_capacity.clone(),
    );
    gen_synthetic_dataset(&s).map_err(|e| e.to_string())
}

/// Runs every grid point on `pool`. A failing point is recorded with its
/// status and the others still run. `on_done` sees points as they finish.
pub fn run_sweep(
    spec: &SweepSpec,
    case: &NetworkCase,
    pool: &rayon::ThreadPool,
    on_done: impl Fn(&SweepPoint) + Sync,
) -> Result<Vec<SweepPoint>, String> {
    let uq = uq_dataset(spec, case)?;
    let cals: Vec<Dataset> = (0..spec.sigma_c.len()).map(|k| cal_dataset(spec, case, k)).collect::<Result<_, _>>()?;
    let grid = spec.grid();
    let points = pool.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(index, &(k, eta))| {
                let config = CalibrationConfig { eta, ..spec.config };
                let res = calibrate(case, &uq, &cals[k], &spec.theta0, &spec.eps0, &config, &Parallel);
                let (status, detail, state) = match res {
                    Ok(s) => (PointStatus::Ok, String::new(), Some(s)),
                    Err(e) => (PointStatus::of(&e), e.to_string(), None),
                };
                let p = SweepPoint { index, sigma_c: spec.sigma_c[k], eta, cal_seed: spec.cal_seed(k), status, detail, state };
                on_done(&p);
                p
            })
            .collect()
    });
    Ok(points)
}

/// Spearman rank correlation with average ranks for ties. NaN for fewer
/// than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return f64::NAN;
    }
    cov / (vx * vy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Mean radius over farms, the scalar used for trends.
pub fn eps_star(state: &CalibrationState) -> f64 {
    state.epsilon.iter().sum::<f64>() / state.epsilon.len() as f64
}

pub fn theta_deviation(state: &CalibrationState, theta0: &Matrix) -> f64 {
    state.theta.distance(theta0)
}

pub fn summary_csv(points: &[SweepPoint], theta0: &Matrix) -> Vec<u8> {
    let (nf, nw) = theta0.shape();
    let mut header: Vec<String> =
        ["point", "sigma_c", "eta", "cal_seed", "status", "iters", "converged"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=nw).map(|j| format!("eps_star_{j}")));
    header.extend(theta_columns(nf, nw).into_iter().map(|c| c.replacen("theta", "theta_star", 1)));
    header.extend(["theta_dev", "mse", "task1", "task2", "total"].iter().map(|s| s.to_string()));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for p in points {
        let mut row = vec![p.index.to_string(), fmt_f64(p.sigma_c), fmt_f64(p.eta), p.cal_seed.to_string(), p.status.name().into()];
        match &p.state {
            Some(s) => {
                let last = s.loss_history.last();
                row.push(s.iter.to_string());
                row.push(s.converged.to_string());
                row.extend(s.epsilon.iter().map(|v| fmt_f64(*v)));
                row.extend(theta_flat(&s.theta).into_iter().map(fmt_f64));
                row.push(fmt_f64(theta_deviation(s, theta0)));
                match last {
                    Some(l) => row.extend([l.mse, l.task1, l.task2, l.total].map(fmt_f64)),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            None => row.extend(std::iter::repeat_n(String::new(), header.len() - row.len())),
        }
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Trend statistics over `σ_c` for one `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaTrend {
    pub eta: f64,
    pub sigma_c: Vec<f64>,
    pub eps_star: Vec<f64>,
    pub theta_dev: Vec<f64>,
    pub spearman_sigma_eps: f64,
    /// Adjacent pairs with strictly larger `ε*` at the larger `σ_c`.
    pub eps_increasing_pairs: usize,
    /// Adjacent pairs with `‖Θ*−Θ0‖` not smaller at the larger `σ_c`.
    pub theta_dev_nondecreasing_pairs: usize,
    pub pairs: usize,
}

/// Per `η`, over the successful points sorted by `σ_c`.
pub fn sigma_trends(points: &[SweepPoint], theta0: &Matrix) -> Vec<SigmaTrend> {
    let mut etas: Vec<f64> = points.iter().map(|p| p.eta).collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    etas.into_iter()
        .map(|eta| {
            let mut ok: Vec<&SweepPoint> = points.iter().filter(|p| p.eta == eta && p.state.is_some()).collect();
            ok.sort_by(|a, b| a.sigma_c.total_cmp(&b.sigma_c));
            let sigma_c: Vec<f64> = ok.iter().map(|p| p.sigma_c).collect();
            let eps: Vec<f64> = ok.iter().map(|p| eps_star(p.state.as_ref().unwrap())).collect();
            let dev: Vec<f64> = ok.iter().map(|p| theta_deviation(p.state.as_ref().unwrap(), theta0)).collect();
            SigmaTrend {
                eta,
                spearman_sigma_eps: spearman(&sigma_c, &eps),
                eps_increasing_pairs: eps.windows(2).filter(|w| w[1] > w[0]).count(),
                theta_dev_nondecreasing_pairs: dev.windows(2).filter(|w| w[1] >= w[0]).count(),
                pairs: eps.len().saturating_sub(1),
                sigma_c,
                eps_star: eps,
                theta_dev: dev,
            }
        })
        .collect()
}
