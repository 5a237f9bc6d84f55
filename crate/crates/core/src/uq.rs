//! Empirical forecast-error distribution and Wasserstein diagnostics.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{forecast, Dataset, DatasetRole};
use crate::math::abs;
use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UqError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("empty input")]
    EmptyInput,
    #[error("dataset role must be `uq`")]
    WrongRole,
    #[error("invalid error model: {0}")]
    Invalid(&'static str),
}

/// Per-farm error samples `ξ̂_ji`, their support and the ambiguity radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalErrorModel {
    /// farms × samples, MW
    pub errors: Matrix,
    pub xi_lower: Vec<f64>,
    pub xi_upper: Vec<f64>,
    /// Wasserstein radius per farm; unset until the calibrator fills it.
    pub epsilon: Option<Vec<f64>>,
    /// Chance-constraint violation level `γ`.
    pub risk_level: f64,
}

impl EmpiricalErrorModel {
    pub fn n_wind(&self) -> usize {
        self.errors.rows()
    }

    pub fn n_samples(&self) -> usize {
        self.errors.cols()
    }

    pub fn with_epsilon(mut self, epsilon: Vec<f64>) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    /// Builds a model from raw per-farm error rows, clamping into the support.
    pub fn from_errors(
        errors: Matrix,
        xi_lower: Vec<f64>,
        xi_upper: Vec<f64>,
        risk_level: f64,
    ) -> Result<Self, UqError> {
        let mut model = Self { errors, xi_lower, xi_upper, epsilon: None, risk_level };
        model.validate_shape()?;
        model.clamp();
        Ok(model)
    }

    fn validate_shape(&self) -> Result<(), UqError> {
        let nw = self.errors.rows();
        if self.xi_lower.len() != nw || self.xi_upper.len() != nw {
            return Err(UqError::DimensionMismatch("support bounds vs farms"));
        }
        if self.errors.cols() == 0 {
            return Err(UqError::EmptyInput);
        }
        if self.xi_lower.iter().zip(&self.xi_upper).any(|(l, u)| !(l < u)) {
            return Err(UqError::Invalid("xi_lower must be < xi_upper"));
        }
        if !(self.risk_level > 0.0 && self.risk_level < 1.0) {
            return Err(UqError::Invalid("risk level must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Full invariant check, including the radii.
    pub fn validate(&self) -> Result<(), UqError> {
        self.validate_shape()?;
        for j in 0..self.n_wind() {
            if self.errors.row(j).iter().any(|e| !(self.xi_lower[j] <= *e && *e <= self.xi_upper[j])) {
                return Err(UqError::Invalid("stored error outside its support"));
            }
        }
        if let Some(eps) = &self.epsilon {
            if eps.len() != self.n_wind() {
                return Err(UqError::DimensionMismatch("epsilon vs farms"));
            }
            if eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                return Err(UqError::Invalid("epsilon must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn clamp(&mut self) {
        let n = self.n_samples();
        let mut clamped = 0usize;
        for j in 0..self.n_wind() {
            let (lo, hi) = (self.xi_lower[j], self.xi_upper[j]);
            for i in 0..n {
                let e = &mut self.errors[(j, i)];
                if *e < lo || *e > hi {
                    log::warn!("forecast error {e:.3} MW of farm {j}, sample {i} clamped to [{lo}, {hi}]");
                    *e = e.clamp(lo, hi);
                    clamped += 1;
                }
            }
        }
        if clamped > 0 {
            log::warn!("{clamped} forecast errors clamped into the support");
        }
    }
}

/// `ξ̂_ji = y_ji − θ_jᵀx_i`, clamped into `[xi_lower, xi_upper]` with a
/// warning. `theta` is features × farms.
pub fn empirical_errors(
    theta: &Matrix,
    uq_data: &Dataset,
    xi_lower: Vec<f64>,
    xi_upper: Vec<f64>,
    risk_level: f64,
) -> Result<EmpiricalErrorModel, UqError> {
    if uq_data.role != DatasetRole::Uq {
        return Err(UqError::WrongRole);
    }
    if theta.rows() != uq_data.n_features() {
        return Err(UqError::DimensionMismatch("theta rows vs features"));
    }
    if theta.cols() != uq_data.n_wind() {
        return Err(UqError::DimensionMismatch("theta columns vs farms"));
    }
    let (n, nw) = (uq_data.len(), uq_data.n_wind());
    let mut errors = Matrix::zeros(nw, n);
    for i in 0..n {
        let yhat = forecast(theta, uq_data.features.row(i));
        for j in 0..nw {
            errors[(j, i)] = uq_data.actuals[(i, j)] - yhat[j];
        }
    }
    EmpiricalErrorModel::from_errors(errors, xi_lower, xi_upper, risk_level)
}

/// Order-1 Wasserstein distance between two equal-size, equal-weight
/// empirical measures on the line.
pub fn wasserstein_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64, UqError> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(UqError::EmptyInput);
    }
    if samples_a.len() != samples_b.len() {
        return Err(UqError::DimensionMismatch("sample counts differ"));
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let total: f64 = a.iter().zip(&b).map(|(x, y)| abs(x - y)).sum();
    Ok(total / a.len() as f64)
}
