//! Sensitivities of the stage-one decision `G = (g, r⁺, r⁻)` with respect to
//! the forecast and the ambiguity radii.
//!
//! The schedule LP is solved with a small `ρ‖x‖²/2` term, then the
//! optimality conditions are differentiated at the interior-point solution.
//! Keeping the complementarity rows `z∘ds + s∘dz = 0` instead of picking an
//! active set lets nearly degenerate rows contribute smoothly.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::NetworkCase;
use crate::matrix::Matrix;
use crate::schedule::{
    build_schedule_program, clip_forecast, finish_schedule, regularize, ScheduleError,
    ScheduleProgramLayout, ScheduleSolution,
};
use crate::solver::{linearized_solve, solve, SolverOptions, SolverSolution, StandardFormProgram};
use crate::uq::EmpiricalErrorModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("invalid layer configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("sensitivity system is singular (condition estimate {condition:e})")]
    SingularKkt { condition: f64 },
    #[error("schedule is infeasible")]
    InfeasibleSchedule,
    #[error("perturbing coordinate {coordinate} makes the schedule infeasible")]
    InfeasiblePerturbation { coordinate: usize },
    #[error(transparent)]
    Schedule(ScheduleError),
}

impl From<ScheduleError> for DiffError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::InfeasibleSchedule => DiffError::InfeasibleSchedule,
            e => DiffError::Schedule(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub regularization_rho: f64,
    /// Rows with slack and dual both below this are counted as degenerate.
    pub active_set_tol: f64,
    /// Relative step of the finite-difference oracle.
    pub fd_step: f64,
    pub solver: SolverOptions,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            regularization_rho: 1e-6,
            active_set_tol: 1e-7,
            fd_step: 1e-4,
            solver: SolverOptions { tol: 1e-9, max_iters: 200 },
        }
    }
}

impl LayerConfig {
    pub fn validate(&self) -> Result<(), DiffError> {
        if !(self.regularization_rho > 0.0) || !self.regularization_rho.is_finite() {
            return Err(DiffError::InvalidConfig("regularization_rho must be positive"));
        }
        if !(self.active_set_tol > 0.0) {
            return Err(DiffError::InvalidConfig("active_set_tol must be positive"));
        }
        if !(self.fd_step > 0.0) {
            return Err(DiffError::InvalidConfig("fd_step must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleJacobians {
    /// `|G| × n_w`
    pub d_g_d_yhat: Matrix,
    /// `|G| × n_w`
    pub d_g_d_eps: Matrix,
    /// Rows that are neither clearly active nor clearly inactive.
    pub degenerate_rows: usize,
    /// Relative diagonal shift the sensitivity solve needed (0 normally).
    pub kkt_shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wrt {
    Yhat,
    Eps,
}

fn solve_regularized(
    case: &NetworkCase,
    forecast: &[f64],
    uq: &EmpiricalErrorModel,
    config: &LayerConfig,
) -> Result<(StandardFormProgram, ScheduleSolution), ScheduleError> {
    let (mut program, layout) = build_schedule_program(case, forecast, uq)?;
    regularize(&mut program, config.regularization_rho);
    let raw = solve(&program, &config.solver)?;
    let sol = finish_schedule(&program, layout, raw, forecast.to_vec(), uq)?;
    Ok((program, sol))
}

/// Solves the regularized schedule and returns `∂G/∂ŷ` and `∂G/∂ε`.
///
/// Farms whose forecast had to be clipped into `[0, capacity]` get a zero
/// `∂G/∂ŷ` column, the derivative of the clip.
pub fn schedule_jacobians(
    case: &NetworkCase,
    forecast: &[f64],
    uq: &EmpiricalErrorModel,
    config: &LayerConfig,
) -> Result<(ScheduleSolution, ScheduleJacobians), DiffError> {
    config.validate()?;
    if forecast.len() != case.n_wind {
        return Err(ScheduleError::DimensionMismatch("forecast length vs wind farms").into());
    }
    let (clipped, mask) = clip_forecast(case, forecast);
    let (program, sol) = solve_regularized(case, &clipped, uq, config)?;
    let lay = &sol.layout;
    let nw = case.n_wind;

    let mut rhs = Vec::with_capacity(2 * nw);
    for j in 0..nw {
        rhs.push(yhat_rhs(case, lay, j));
    }
    for j in 0..nw {
        rhs.push(eps_rhs(lay, &sol.raw, uq.risk_level, j));
    }
    let Some((dx, shift)) = linearized_solve(&program, &sol.raw, &rhs) else {
        return Err(DiffError::SingularKkt { condition: condition_estimate(&sol.raw) });
    };
    if shift > 0.0 {
        log::debug!("sensitivity solve needed a diagonal shift of {shift:e}");
    }

    let n_dec = lay.n_decision();
    let mut d_y = Matrix::zeros(n_dec, nw);
    let mut d_e = Matrix::zeros(n_dec, nw);
    for j in 0..nw {
        if !mask[j] {
            d_y.set_col(j, &decision_block(lay, &dx[j]));
        }
        d_e.set_col(j, &decision_block(lay, &dx[nw + j]));
    }
    let tol = config.active_set_tol;
    let degenerate_rows =
        sol.raw.ineq_slacks.iter().zip(&sol.raw.ineq_duals).filter(|(s, z)| **s <= tol && **z <= tol).count();
    let jac = ScheduleJacobians { d_g_d_yhat: d_y, d_g_d_eps: d_e, degenerate_rows, kkt_shift: shift };
    Ok((sol, jac))
}

fn decision_block(lay: &ScheduleProgramLayout, dx: &[f64]) -> Vec<f64> {
    let mut out = dx[lay.g.clone()].to_vec();
    out.extend_from_slice(&dx[lay.r_plus.clone()]);
    out.extend_from_slice(&dx[lay.r_minus.clone()]);
    out
}

/// ŷ_j lowers the balance right-hand side and shifts both line rows by the
/// farm's PTDF column.
fn yhat_rhs(case: &NetworkCase, lay: &ScheduleProgramLayout, j: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rx = vec![0.0; lay.n_vars];
    let mut ry = vec![0.0; lay.n_eq];
    ry[lay.row_balance] = -1.0;
    // r_g = dG·x − dh
    let mut r_g = vec![0.0; lay.n_ineq];
    for l in 0..case.n_lines {
        let phi = case.ptdf[(l, case.wind_bus[j])];
        r_g[lay.rows_line_upper.start + l] = phi;
        r_g[lay.rows_line_lower.start + l] = -phi;
    }
    (rx, ry, r_g)
}

/// ε_j enters the cost of `λᴼ_j` and the `λᶜ_j` coefficient of the CVaR row.
fn eps_rhs(lay: &ScheduleProgramLayout, raw: &SolverSolution, gamma: f64, j: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rx = vec![0.0; lay.n_vars];
    rx[lay.lambda_o.start + j] = -1.0;
    rx[lay.lambda_c.start + j] -= raw.ineq_duals[lay.row_cvar] / gamma;
    let ry = vec![0.0; lay.n_eq];
    let mut r_g = vec![0.0; lay.n_ineq];
    r_g[lay.row_cvar] = raw.primal[lay.lambda_c.start + j] / gamma;
    (rx, ry, r_g)
}

fn condition_estimate(raw: &SolverSolution) -> f64 {
    let w: Vec<f64> = raw.ineq_duals.iter().zip(&raw.ineq_slacks).map(|(z, s)| z / s).collect();
    let hi = w.iter().cloned().fold(0.0, f64::max);
    let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo > 0.0 { hi / lo } else { f64::INFINITY }
}

/// Central differences of the regularized optimal `G` along each forecast or
/// radius coordinate, with steps `step·max(1, |value|)`.
pub fn finite_difference_jacobian(
    case: &NetworkCase,
    forecast: &[f64],
    uq: &EmpiricalErrorModel,
    wrt: Wrt,
    step: f64,
    config: &LayerConfig,
) -> Result<Matrix, DiffError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(DiffError::InvalidConfig("finite-difference step must be positive"));
    }
    config.validate()?;
    let nw = case.n_wind;
    let eps = uq.epsilon.clone().ok_or(ScheduleError::UnsetEpsilon)?;
    let mut out = Matrix::zeros(3 * case.n_generators, nw);
    for j in 0..nw {
        let (up, dn) = match wrt {
            Wrt::Yhat => {
                let h = step * forecast[j].abs().max(1.0);
                let shifted = |s: f64| {
                    let mut f = forecast.to_vec();
                    f[j] += s;
                    f
                };
                let up = solve_regularized(case, &shifted(h), uq, config);
                let dn = solve_regularized(case, &shifted(-h), uq, config);
                (up.map(|r| (r.1, h)), dn.map(|r| r.1))
            }
            Wrt::Eps => {
                let h = step * eps[j].abs().max(1.0);
                let shifted = |s: f64| {
                    let mut e = eps.clone();
                    e[j] += s;
                    uq.clone().with_epsilon(e)
                };
                let up = solve_regularized(case, forecast, &shifted(h), config);
                // a backward step below zero is outside the model; go one-sided
                let dn = if eps[j] >= h {
                    solve_regularized(case, forecast, &shifted(-h), config).map(|r| r.1)
                } else {
                    solve_regularized(case, forecast, uq, config).map(|r| r.1)
                };
                let width = if eps[j] >= h { h } else { h / 2.0 };
                (up.map(|r| (r.1, width)), dn)
            }
        };
        let perturbation = |e: ScheduleError| match e {
            ScheduleError::InfeasibleSchedule | ScheduleError::ForecastOutOfRange { .. } => {
                DiffError::InfeasiblePerturbation { coordinate: j }
            }
            e => DiffError::Schedule(e),
        };
        let (up, h) = up.map_err(perturbation)?;
        let dn = dn.map_err(perturbation)?;
        let col: Vec<f64> =
            up.decision().iter().zip(dn.decision()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        out.set_col(j, &col);
    }
    Ok(out)
}
