//! Datasets and synthetic data generation.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    /// Samples used to build the empirical error distribution.
    Uq,
    /// Samples used for cost-oriented calibration.
    Calibration,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("features have {features} rows but actuals have {actuals}")]
    SampleCountMismatch { features: usize, actuals: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("actual of sample {sample}, farm {farm} is {value} MW, outside [0, {capacity}]")]
    OutOfRange { sample: usize, farm: usize, value: f64, capacity: f64 },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// samples × features
    pub features: Matrix,
    /// samples × wind farms, MW
    pub actuals: Matrix,
    pub role: DatasetRole,
}

impl Dataset {
    pub fn new(features: Matrix, actuals: Matrix, role: DatasetRole) -> Result<Self, DataError> {
        if features.rows() != actuals.rows() {
            return Err(DataError::SampleCountMismatch {
                features: features.rows(),
                actuals: actuals.rows(),
            });
        }
        Ok(Self { features, actuals, role })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_wind(&self) -> usize {
        self.actuals.cols()
    }

    /// Checks every actual against `[0, capacity]`.
    pub fn check_capacity(&self, capacity: &[f64]) -> Result<(), DataError> {
        if capacity.len() != self.n_wind() {
            return Err(DataError::DimensionMismatch("capacity length vs wind farms"));
        }
        for i in 0..self.len() {
            for (j, cap) in capacity.iter().enumerate() {
                let v = self.actuals[(i, j)];
                if !(0.0..=*cap).contains(&v) {
                    return Err(DataError::OutOfRange { sample: i, farm: j, value: v, capacity: *cap });
                }
            }
        }
        Ok(())
    }

    /// Keeps only the listed wind-farm columns of the actuals.
    pub fn select_farms(&self, farms: &[usize]) -> Self {
        let mut actuals = Matrix::zeros(self.len(), farms.len());
        for i in 0..self.len() {
            for (k, j) in farms.iter().enumerate() {
                actuals[(i, k)] = self.actuals[(i, *j)];
            }
        }
        Self { features: self.features.clone(), actuals, role: self.role }
    }
}

/// Linear forecast `Θᵀx` for one feature vector; `theta` is features × farms.
pub fn forecast(theta: &Matrix, x: &[f64]) -> Vec<f64> {
    theta.tr_mul_vec(x)
}

/// Parameters of [`gen_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// features × farms
    pub theta0: Matrix,
    pub n: usize,
    /// Standard deviation of the additive forecast error, MW.
    pub sigma: f64,
    pub seed: u64,
    pub role: DatasetRole,
    /// Features are drawn uniformly from `[feature_low, feature_high]`.
    pub feature_low: f64,
    pub feature_high: f64,
    /// Actuals are clipped to `[0, capacity]` per farm.
    pub capacity: Vec<f64>,
}

impl SyntheticSpec {
    pub const DEFAULT_FEATURE_RANGE: (f64, f64) = (20.0, 50.0);

    pub fn new(theta0: Matrix, n: usize, sigma: f64, seed: u64, role: DatasetRole, capacity: Vec<f64>) -> Self {
        let (feature_low, feature_high) = Self::DEFAULT_FEATURE_RANGE;
        Self { theta0, n, sigma, seed, role, feature_low, feature_high, capacity }
    }
}

/// Draws `x ~ U[low, high]^F` and `y = clip(Θ0ᵀx + ξ, 0, capacity)` with
/// `ξ ~ N(0, σ²)`, deterministically from `seed`.
pub fn gen_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(DataError::InvalidSpec("sigma must be finite and >= 0"));
    }
    if spec.n == 0 {
        return Err(DataError::InvalidSpec("n must be >= 1"));
    }
    if !(spec.feature_low <= spec.feature_high) {
        return Err(DataError::InvalidSpec("feature range is empty"));
    }
    if spec.capacity.len() != spec.theta0.cols() {
        return Err(DataError::DimensionMismatch("capacity length vs theta0 columns"));
    }
    let (nf, nw) = spec.theta0.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let uniform = Uniform::new_inclusive(spec.feature_low, spec.feature_high)
        .map_err(|_| DataError::InvalidSpec("feature range"))?;
    let noise = Normal::new(0.0, spec.sigma).map_err(|_| DataError::InvalidSpec("sigma"))?;

    let mut features = Matrix::zeros(spec.n, nf);
    let mut actuals = Matrix::zeros(spec.n, nw);
    for i in 0..spec.n {
        for f in 0..nf {
            features[(i, f)] = rng.sample(uniform);
        }
        let mean = forecast(&spec.theta0, features.row(i));
        for j in 0..nw {
            let y = mean[j] + noise.sample(&mut rng);
            actuals[(i, j)] = y.clamp(0.0, spec.capacity[j]);
        }
    }
    Dataset::new(features, actuals, spec.role)
}
