//! Convex quadratic programs in standard form and a primal-dual
//! interior-point solver for them.
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  E x  = b      (eq_duals y, free)
//!             G x <= h      (ineq_duals z >= 0)
//! ```
//!
//! Duals follow the Lagrangian `f(x) + yᵀ(Ex - b) + zᵀ(Gx - h)`.

mod dump;
mod ipm;
pub(crate) mod kkt;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{abs, dot, norm_inf};
use crate::sparse::SparseMatrix;

pub use dump::dump_program;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardFormProgram {
    pub quadratic_term: SparseMatrix,
    pub linear_cost: Vec<f64>,
    pub eq_matrix: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq_matrix: SparseMatrix,
    pub ineq_rhs: Vec<f64>,
    pub variable_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖Px + q + Eᵀy + Gᵀz‖∞ / (1 + ‖q‖∞)`
    pub stationarity: f64,
    /// Equality and inequality violation, each scaled by `1 + ‖rhs‖∞`.
    pub primal_feas: f64,
    /// Largest negative inequality dual.
    pub dual_feas: f64,
    /// `Σ |z_i (h - Gx)_i| / (1 + |objective|)`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal_feas).max(self.dual_feas).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSolution {
    pub primal: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    /// Interior-point slacks `s ≈ h - Gx` at the returned iterate.
    pub ineq_slacks: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("quadratic term is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("program data contains non-finite values")]
    NonFinite,
}

impl StandardFormProgram {
    /// A program with no constraints and zero quadratic term; rows are added
    /// by assigning the matrix fields.
    pub fn linear(cost: Vec<f64>) -> Self {
        let n = cost.len();
        Self {
            quadratic_term: SparseMatrix::empty(n, n),
            linear_cost: cost,
            eq_matrix: SparseMatrix::empty(0, n),
            eq_rhs: Vec::new(),
            ineq_matrix: SparseMatrix::empty(0, n),
            ineq_rhs: Vec::new(),
            variable_names: None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear_cost.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        let dims = |what: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(SolverError::DimensionMismatch(what.into()))
            }
        };
        dims(
            "quadratic_term must be n x n",
            self.quadratic_term.nrows() == n && self.quadratic_term.ncols() == n,
        )?;
        dims("eq_matrix columns", self.eq_matrix.ncols() == n)?;
        dims("eq_matrix rows vs eq_rhs", self.eq_matrix.nrows() == self.eq_rhs.len())?;
        dims("ineq_matrix columns", self.ineq_matrix.ncols() == n)?;
        dims("ineq_matrix rows vs ineq_rhs", self.ineq_matrix.nrows() == self.ineq_rhs.len())?;
        if let Some(names) = &self.variable_names {
            dims("variable_names length", names.len() == n)?;
        }
        let finite = crate::math::all_finite(&self.linear_cost)
            && crate::math::all_finite(&self.eq_rhs)
            && crate::math::all_finite(&self.ineq_rhs)
            && self.quadratic_term.is_finite()
            && self.eq_matrix.is_finite()
            && self.ineq_matrix.is_finite();
        if !finite {
            return Err(SolverError::NonFinite);
        }
        let asym = self.quadratic_term.asymmetry();
        if asym > 1e-12 {
            return Err(SolverError::NotSymmetric(asym));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.quadratic_term.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.linear_cost, x)
    }

    /// Wolfe dual objective `-½xᵀPx - bᵀy - hᵀz`.
    pub fn dual_objective(&self, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
        let px = self.quadratic_term.mul_vec(x);
        -0.5 * dot(x, &px) - dot(&self.eq_rhs, y) - dot(&self.ineq_rhs, z)
    }
}

/// Solves the program. Invalid input is an error; everything else, including
/// infeasibility, is reported through [`SolverSolution::status`].
pub fn solve(
    program: &StandardFormProgram,
    options: &SolverOptions,
) -> Result<SolverSolution, SolverError> {
    program.validate()?;
    Ok(ipm::run(program, options))
}

/// Sensitivities `dx` of a solution under data perturbations; see
/// [`ipm::linearized_solve`] for the right-hand side convention.
pub(crate) fn linearized_solve(
    program: &StandardFormProgram,
    solution: &SolverSolution,
    rhs: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
) -> Option<(Vec<Vec<f64>>, f64)> {
    ipm::linearized_solve(program, solution, rhs)
}

/// Recomputes the KKT residuals of `solution` from the program data alone,
/// without using the solver's slacks.
pub fn verify_kkt(
    program: &StandardFormProgram,
    solution: &SolverSolution,
) -> Result<KktResiduals, SolverError> {
    kkt_residuals(program, &solution.primal, &solution.eq_duals, &solution.ineq_duals)
}

/// KKT residuals of an arbitrary primal-dual triple.
pub fn kkt_residuals(
    program: &StandardFormProgram,
    primal: &[f64],
    eq_duals: &[f64],
    ineq_duals: &[f64],
) -> Result<KktResiduals, SolverError> {
    if primal.len() != program.num_vars()
        || eq_duals.len() != program.num_eq()
        || ineq_duals.len() != program.num_ineq()
    {
        return Err(SolverError::DimensionMismatch("solution does not match program".into()));
    }
    let (x, y, z) = (primal, eq_duals, ineq_duals);
    let mut grad = program.quadratic_term.mul_vec(x);
    for (g, q) in grad.iter_mut().zip(&program.linear_cost) {
        *g += q;
    }
    for (g, v) in grad.iter_mut().zip(program.eq_matrix.tr_mul_vec(y)) {
        *g += v;
    }
    for (g, v) in grad.iter_mut().zip(program.ineq_matrix.tr_mul_vec(z)) {
        *g += v;
    }
    let stationarity = norm_inf(&grad) / (1.0 + norm_inf(&program.linear_cost));

    let eq_viol = program
        .eq_matrix
        .mul_vec(x)
        .iter()
        .zip(&program.eq_rhs)
        .fold(0.0_f64, |m, (ax, b)| m.max(abs(ax - b)));
    let slack: Vec<f64> =
        program.ineq_rhs.iter().zip(program.ineq_matrix.mul_vec(x)).map(|(h, gx)| h - gx).collect();
    let ineq_viol = slack.iter().fold(0.0_f64, |m, s| m.max(-s));
    let primal_feas = (eq_viol / (1.0 + norm_inf(&program.eq_rhs)))
        .max(ineq_viol / (1.0 + norm_inf(&program.ineq_rhs)));

    let dual_feas = z.iter().fold(0.0_f64, |m, zi| m.max(-zi));
    let comp: f64 = z.iter().zip(&slack).map(|(zi, si)| abs(zi * si)).sum();
    let complementarity = comp / (1.0 + abs(program.objective(x)));

    Ok(KktResiduals { stationarity, primal_feas, dual_feas, complementarity })
}

/// Relative primal-dual objective gap `|p - d| / (1 + |p|)`.
pub fn duality_gap(program: &StandardFormProgram, solution: &SolverSolution) -> f64 {
    let p = program.objective(&solution.primal);
    let d = program.dual_objective(&solution.primal, &solution.eq_duals, &solution.ineq_duals);
    abs(p - d) / (1.0 + abs(p))
}
