//! Stage one: the reformulated distributionally robust reserve schedule.
//!
//! Variables, in order: `g`, `r⁺`, `r⁻`, `A` (generators × farms, row-major),
//! `τ`, `λᴼ`, `λᶜ`, `sᴼ` (farms × samples), `sᶜ_i`, `sᶜ_jik` with
//! `k = 0..2n_g+1` indexing the stacked rows `[0; A; −A]` and entries
//! `[0; −r⁺−τ1; −r⁻−τ1]`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::NetworkCase;
use crate::math::dot;
use crate::matrix::Matrix;
use crate::solver::{solve, SolveStatus, SolverError, SolverOptions, SolverSolution, StandardFormProgram};
use crate::sparse::SparseMatrix;
use crate::uq::{EmpiricalErrorModel, UqError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("ambiguity radii are not set")]
    UnsetEpsilon,
    #[error("forecast of farm {farm} is {value} MW, outside [0, {capacity}]")]
    ForecastOutOfRange { farm: usize, value: f64, capacity: f64 },
    #[error("schedule is infeasible")]
    InfeasibleSchedule,
    #[error("schedule solve did not converge ({status:?}, KKT residual {residual:e})")]
    NotConverged { status: SolveStatus, residual: f64 },
    #[error(transparent)]
    Uq(#[from] UqError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Where every variable block and constraint group lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleProgramLayout {
    pub n_g: usize,
    pub n_w: usize,
    pub n_s: usize,
    pub n_k: usize,
    pub n_lines: usize,
    pub g: Range<usize>,
    pub r_plus: Range<usize>,
    pub r_minus: Range<usize>,
    pub a: Range<usize>,
    pub tau: usize,
    pub lambda_o: Range<usize>,
    pub lambda_c: Range<usize>,
    pub s_o: Range<usize>,
    pub s_c_i: Range<usize>,
    pub s_c_jik: Range<usize>,
    pub n_vars: usize,

    /// Equality rows.
    pub row_balance: usize,
    pub rows_participation: Range<usize>,
    pub n_eq: usize,

    /// Inequality rows.
    pub rows_gen_lower: Range<usize>,
    pub rows_gen_upper: Range<usize>,
    pub rows_line_upper: Range<usize>,
    pub rows_line_lower: Range<usize>,
    /// Three rows per `(j, i)`: sample, upper support, lower support.
    pub rows_s_o: Range<usize>,
    pub row_cvar: usize,
    /// One row per `(i, k)`.
    pub rows_aggregation: Range<usize>,
    /// Three rows per `(j, i, k)`.
    pub rows_s_c: Range<usize>,
    pub rows_nonneg: Range<usize>,
    /// Upper bounds on `λᴼ` and `λᶜ` that never bind at an optimum.
    pub rows_lambda_cap: Range<usize>,
    pub n_ineq: usize,
}

impl ScheduleProgramLayout {
    pub fn new(n_g: usize, n_w: usize, n_s: usize, n_lines: usize) -> Self {
        let n_k = 2 * n_g + 1;
        let mut next = 0;
        let mut block = |len: usize| {
            let r = next..next + len;
            next += len;
            r
        };
        let g = block(n_g);
        let r_plus = block(n_g);
        let r_minus = block(n_g);
        let a = block(n_g * n_w);
        let tau = block(1).start;
        let lambda_o = block(n_w);
        let lambda_c = block(n_w);
        let s_o = block(n_w * n_s);
        let s_c_i = block(n_s);
        let s_c_jik = block(n_w * n_s * n_k);
        let n_vars = next;

        let row_balance = 0;
        let rows_participation = 1..1 + n_w;
        let n_eq = 1 + n_w;

        let mut next = 0;
        let mut rows = |len: usize| {
            let r = next..next + len;
            next += len;
            r
        };
        let rows_gen_lower = rows(n_g);
        let rows_gen_upper = rows(n_g);
        let rows_line_upper = rows(n_lines);
        let rows_line_lower = rows(n_lines);
        let rows_s_o = rows(3 * n_w * n_s);
        let row_cvar = rows(1).start;
        let rows_aggregation = rows(n_s * n_k);
        let rows_s_c = rows(3 * n_w * n_s * n_k);
        let rows_nonneg = rows(2 * n_g + n_g * n_w + 2 * n_w);
        let rows_lambda_cap = rows(2 * n_w);
        let n_ineq = next;

        Self {
            n_g,
            n_w,
            n_s,
            n_k,
            n_lines,
            g,
            r_plus,
            r_minus,
            a,
            tau,
            lambda_o,
            lambda_c,
            s_o,
            s_c_i,
            s_c_jik,
            n_vars,
            row_balance,
            rows_participation,
            n_eq,
            rows_gen_lower,
            rows_gen_upper,
            rows_line_upper,
            rows_line_lower,
            rows_s_o,
            row_cvar,
            rows_aggregation,
            rows_s_c,
            rows_nonneg,
            rows_lambda_cap,
            n_ineq,
        }
    }

    pub fn a_index(&self, g: usize, j: usize) -> usize {
        self.a.start + g * self.n_w + j
    }

    pub fn s_o_index(&self, j: usize, i: usize) -> usize {
        self.s_o.start + j * self.n_s + i
    }

    pub fn s_c_index(&self, j: usize, i: usize, k: usize) -> usize {
        self.s_c_jik.start + (j * self.n_s + i) * self.n_k + k
    }

    /// Length of the stacked `G = (g, r⁺, r⁻)` block.
    pub fn n_decision(&self) -> usize {
        3 * self.n_g
    }

    /// Human-readable variable names in layout order.
    pub fn variable_names(&self) -> Vec<String> {
        use alloc::format;
        let mut names = Vec::with_capacity(self.n_vars);
        names.extend((0..self.n_g).map(|g| format!("g[{g}]")));
        names.extend((0..self.n_g).map(|g| format!("r_plus[{g}]")));
        names.extend((0..self.n_g).map(|g| format!("r_minus[{g}]")));
        for g in 0..self.n_g {
            names.extend((0..self.n_w).map(|j| format!("A[{g},{j}]")));
        }
        names.push("tau".into());
        names.extend((0..self.n_w).map(|j| format!("lambda_O[{j}]")));
        names.extend((0..self.n_w).map(|j| format!("lambda_C[{j}]")));
        for j in 0..self.n_w {
            names.extend((0..self.n_s).map(|i| format!("s_O[{j},{i}]")));
        }
        names.extend((0..self.n_s).map(|i| format!("s_C[{i}]")));
        for j in 0..self.n_w {
            for i in 0..self.n_s {
                names.extend((0..self.n_k).map(|k| format!("s_C[{j},{i},{k}]")));
            }
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSolution {
    pub g: Vec<f64>,
    pub r_plus: Vec<f64>,
    pub r_minus: Vec<f64>,
    /// generators × farms
    pub a: Matrix,
    pub tau: f64,
    pub lambda_o: Vec<f64>,
    pub lambda_c: Vec<f64>,
    /// farms × samples
    pub s_o: Matrix,
    pub s_c_i: Vec<f64>,
    /// Flat `(j, i, k)` block in layout order.
    pub s_c_jik: Vec<f64>,
    pub objective_total: f64,
    pub objective_stage1: f64,
    pub objective_worstcase: f64,
    pub status: SolveStatus,
    /// Forecast the program was built with, after clipping.
    pub forecast: Vec<f64>,
    pub layout: ScheduleProgramLayout,
    pub raw: SolverSolution,
}

impl ScheduleSolution {
    /// `G = (g, r⁺, r⁻)` stacked.
    pub fn decision(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.g.len());
        out.extend_from_slice(&self.g);
        out.extend_from_slice(&self.r_plus);
        out.extend_from_slice(&self.r_minus);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOptions {
    pub solver: SolverOptions,
    /// Weight `ρ` of the `ρ‖x‖²/2` term; zero solves the plain LP.
    pub regularization: f64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self { solver: SolverOptions { tol: 1e-9, max_iters: 200 }, regularization: 0.0 }
    }
}

/// Clips a forecast into `[0, capacity]`; the mask marks clipped farms.
pub fn clip_forecast(case: &NetworkCase, forecast: &[f64]) -> (Vec<f64>, Vec<bool>) {
    forecast
        .iter()
        .zip(&case.wind_capacity)
        .map(|(y, cap)| {
            let c = y.clamp(0.0, *cap);
            (c, c != *y)
        })
        .unzip()
}

fn check_inputs(case: &NetworkCase, forecast: &[f64], uq: &EmpiricalErrorModel) -> Result<(), ScheduleError> {
    if forecast.len() != case.n_wind {
        return Err(ScheduleError::DimensionMismatch("forecast length vs wind farms"));
    }
    if uq.n_wind() != case.n_wind {
        return Err(ScheduleError::DimensionMismatch("error model farms vs case"));
    }
    if uq.epsilon.is_none() {
        return Err(ScheduleError::UnsetEpsilon);
    }
    uq.validate()?;
    for (farm, (y, cap)) in forecast.iter().zip(&case.wind_capacity).enumerate() {
        if !(0.0..=*cap).contains(y) {
            return Err(ScheduleError::ForecastOutOfRange { farm, value: *y, capacity: *cap });
        }
    }
    Ok(())
}

/// Assembles the schedule LP for one forecast.
pub fn build_schedule_program(
    case: &NetworkCase,
    forecast: &[f64],
    uq: &EmpiricalErrorModel,
) -> Result<(StandardFormProgram, ScheduleProgramLayout), ScheduleError> {
    check_inputs(case, forecast, uq)?;
    let eps = uq.epsilon.as_ref().expect("checked");
    let (ng, nw, ns) = (case.n_generators, case.n_wind, uq.n_samples());
    let lay = ScheduleProgramLayout::new(ng, nw, ns, case.n_lines);
    let gamma = uq.risk_level;

    let mut cost = vec![0.0; lay.n_vars];
    for g in 0..ng {
        cost[lay.g.start + g] = case.cost_energy[g];
        cost[lay.r_plus.start + g] = case.cost_reserve[g];
        cost[lay.r_minus.start + g] = case.cost_reserve[g];
    }
    for j in 0..nw {
        cost[lay.lambda_o.start + j] = eps[j];
        for i in 0..ns {
            cost[lay.s_o_index(j, i)] = 1.0 / ns as f64;
        }
    }

    // equalities
    let mut eq = Vec::new();
    let mut b = vec![0.0; lay.n_eq];
    for g in 0..ng {
        eq.push((lay.row_balance, lay.g.start + g, 1.0));
    }
    b[lay.row_balance] = case.total_demand() - forecast.iter().sum::<f64>();
    for j in 0..nw {
        let row = lay.rows_participation.start + j;
        for g in 0..ng {
            eq.push((row, lay.a_index(g, j), 1.0));
        }
        b[row] = 1.0;
    }

    // inequalities
    let mut gm = Vec::new();
    let mut h = vec![0.0; lay.n_ineq];
    for g in 0..ng {
        let row = lay.rows_gen_lower.start + g;
        gm.push((row, lay.g.start + g, -1.0));
        gm.push((row, lay.r_minus.start + g, 1.0));
        h[row] = -case.gen_min[g];
        let row = lay.rows_gen_upper.start + g;
        gm.push((row, lay.g.start + g, 1.0));
        gm.push((row, lay.r_plus.start + g, 1.0));
        h[row] = case.gen_max[g];
    }
    let phi_g = case.ptdf_gen();
    let offset = line_offset(case, forecast);
    for l in 0..case.n_lines {
        let (up, lo) = (lay.rows_line_upper.start + l, lay.rows_line_lower.start + l);
        for g in 0..ng {
            let v = phi_g[(l, g)];
            gm.push((up, lay.g.start + g, v));
            gm.push((lo, lay.g.start + g, -v));
        }
        h[up] = case.line_limit[l] - offset[l];
        h[lo] = case.line_limit[l] + offset[l];
    }

    // sᴼ epigraph: aᴼ_j ξ with aᴼ_j = −Σ_g c_a,g A_gj
    for j in 0..nw {
        let (lo, hi) = (uq.xi_lower[j], uq.xi_upper[j]);
        for i in 0..ns {
            let xi = uq.errors[(j, i)];
            let base = lay.rows_s_o.start + 3 * (j * ns + i);
            let s = lay.s_o_index(j, i);
            let lam = lay.lambda_o.start + j;
            for (branch, point, lam_coef) in [(0, xi, 0.0), (1, hi, -(hi - xi)), (2, lo, lo - xi)] {
                let row = base + branch;
                for g in 0..ng {
                    gm.push((row, lay.a_index(g, j), -case.cost_activation[g] * point));
                }
                if lam_coef != 0.0 {
                    gm.push((row, lam, lam_coef));
                }
                gm.push((row, s, -1.0));
            }
        }
    }

    // τ + (1/γ)(Σ_j λᶜ_j ε_j + mean_i sᶜ_i) ≤ 0
    gm.push((lay.row_cvar, lay.tau, 1.0));
    for j in 0..nw {
        gm.push((lay.row_cvar, lay.lambda_c.start + j, eps[j] / gamma));
    }
    for i in 0..ns {
        gm.push((lay.row_cvar, lay.s_c_i.start + i, 1.0 / (gamma * ns as f64)));
    }

    // b_k + Σ_j sᶜ_jik − sᶜ_i ≤ 0
    for i in 0..ns {
        for k in 0..lay.n_k {
            let row = lay.rows_aggregation.start + i * lay.n_k + k;
            if k >= 1 {
                let g = (k - 1) % ng;
                let r = if k <= ng { lay.r_plus.start } else { lay.r_minus.start };
                gm.push((row, r + g, -1.0));
                gm.push((row, lay.tau, -1.0));
            }
            for j in 0..nw {
                gm.push((row, lay.s_c_index(j, i, k), 1.0));
            }
            gm.push((row, lay.s_c_i.start + i, -1.0));
        }
    }

    // sᶜ_jik epigraph with aᶜ_kj ∈ {0, A_gj, −A_gj}
    for j in 0..nw {
        let (lo, hi) = (uq.xi_lower[j], uq.xi_upper[j]);
        let lam = lay.lambda_c.start + j;
        for i in 0..ns {
            let xi = uq.errors[(j, i)];
            for k in 0..lay.n_k {
                let base = lay.rows_s_c.start + 3 * ((j * ns + i) * lay.n_k + k);
                let s = lay.s_c_index(j, i, k);
                let a = match k {
                    0 => None,
                    k if k <= ng => Some((lay.a_index(k - 1, j), 1.0)),
                    k => Some((lay.a_index(k - 1 - ng, j), -1.0)),
                };
                for (branch, point, lam_coef) in [(0, xi, 0.0), (1, hi, -(hi - xi)), (2, lo, lo - xi)] {
                    let row = base + branch;
                    if let Some((col, sign)) = a {
                        gm.push((row, col, sign * point));
                    }
                    if lam_coef != 0.0 {
                        gm.push((row, lam, lam_coef));
                    }
                    gm.push((row, s, -1.0));
                }
            }
        }
    }

    let mut row = lay.rows_nonneg.start;
    let nonneg = lay
        .r_plus
        .clone()
        .chain(lay.r_minus.clone())
        .chain(lay.a.clone())
        .chain(lay.lambda_o.clone())
        .chain(lay.lambda_c.clone());
    for col in nonneg {
        gm.push((row, col, -1.0));
        row += 1;
    }
    debug_assert_eq!(row, lay.rows_nonneg.end);

    // |aᴼ_j| ≤ max c_a and |aᶜ_kj| ≤ 1 whenever Aᵀ1 = 1, A ≥ 0; larger
    // multipliers only add cost, so these caps never cut an optimum.
    let ca_max = case.cost_activation.iter().fold(0.0_f64, |m, c| m.max(*c));
    for j in 0..nw {
        let row = lay.rows_lambda_cap.start + j;
        gm.push((row, lay.lambda_o.start + j, 1.0));
        h[row] = 2.0 * ca_max.max(1.0);
        let row = lay.rows_lambda_cap.start + nw + j;
        gm.push((row, lay.lambda_c.start + j, 1.0));
        h[row] = 2.0;
    }

    let program = StandardFormProgram {
        quadratic_term: SparseMatrix::empty(lay.n_vars, lay.n_vars),
        linear_cost: cost,
        eq_matrix: SparseMatrix::from_triplets(lay.n_eq, lay.n_vars, &eq),
        eq_rhs: b,
        ineq_matrix: SparseMatrix::from_triplets(lay.n_ineq, lay.n_vars, &gm),
        ineq_rhs: h,
        variable_names: None,
    };
    Ok((program, lay))
}

/// `Φ(S_w ŷ − d)`, the part of the line flows that does not depend on `g`.
pub fn line_offset(case: &NetworkCase, wind: &[f64]) -> Vec<f64> {
    case.line_flows(&vec![0.0; case.n_generators], wind)
}

/// Adds `ρ‖x‖²/2` to a program.
pub fn regularize(program: &mut StandardFormProgram, rho: f64) {
    if rho > 0.0 {
        let n = program.num_vars();
        let trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, rho)).collect();
        program.quadratic_term = SparseMatrix::from_triplets(n, n, &trip);
    }
}

/// Solves the schedule for one forecast, clipping it into range first.
pub fn solve_schedule(
    case: &NetworkCase,
    forecast: &[f64],
    uq: &EmpiricalErrorModel,
    options: &ScheduleOptions,
) -> Result<ScheduleSolution, ScheduleError> {
    if forecast.len() != case.n_wind {
        return Err(ScheduleError::DimensionMismatch("forecast length vs wind farms"));
    }
    let (clipped, mask) = clip_forecast(case, forecast);
    for (j, hit) in mask.iter().enumerate() {
        if *hit {
            log::warn!("forecast {:.3} MW of farm {j} clipped to {:.3} MW", forecast[j], clipped[j]);
        }
    }
    let (mut program, layout) = build_schedule_program(case, &clipped, uq)?;
    regularize(&mut program, options.regularization);
    let raw = solve(&program, &options.solver)?;
    finish_schedule(&program, layout, raw, clipped, uq)
}

/// Maps a solver result onto the schedule blocks, turning failures into errors.
pub(crate) fn finish_schedule(
    program: &StandardFormProgram,
    layout: ScheduleProgramLayout,
    raw: SolverSolution,
    forecast: Vec<f64>,
    uq: &EmpiricalErrorModel,
) -> Result<ScheduleSolution, ScheduleError> {
    match raw.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(ScheduleError::InfeasibleSchedule),
        status => {
            return Err(ScheduleError::NotConverged { status, residual: raw.kkt_residuals.max() })
        }
    }
    let x = &raw.primal;
    let lay = &layout;
    let a = Matrix::from_row_major(lay.n_g, lay.n_w, x[lay.a.clone()].to_vec()).expect("layout");
    let s_o = Matrix::from_row_major(lay.n_w, lay.n_s, x[lay.s_o.clone()].to_vec()).expect("layout");
    let mut sol = ScheduleSolution {
        g: x[lay.g.clone()].to_vec(),
        r_plus: x[lay.r_plus.clone()].to_vec(),
        r_minus: x[lay.r_minus.clone()].to_vec(),
        a,
        tau: x[lay.tau],
        lambda_o: x[lay.lambda_o.clone()].to_vec(),
        lambda_c: x[lay.lambda_c.clone()].to_vec(),
        s_o,
        s_c_i: x[lay.s_c_i.clone()].to_vec(),
        s_c_jik: x[lay.s_c_jik.clone()].to_vec(),
        objective_total: dot(&program.linear_cost, x),
        objective_stage1: 0.0,
        objective_worstcase: 0.0,
        status: raw.status,
        forecast,
        layout: layout.clone(),
        raw,
    };
    sol.objective_stage1 = stage1_cost_from_program(program, &sol);
    sol.objective_worstcase = worst_case_term(&sol, uq);
    Ok(sol)
}

fn stage1_cost_from_program(program: &StandardFormProgram, sol: &ScheduleSolution) -> f64 {
    let lay = &sol.layout;
    let c = &program.linear_cost;
    dot(&c[lay.g.clone()], &sol.g)
        + dot(&c[lay.r_plus.clone()], &sol.r_plus)
        + dot(&c[lay.r_minus.clone()], &sol.r_minus)
}

/// `c_gᵀg + c_rᵀ(r⁺ + r⁻)`.
pub fn stage1_cost(case: &NetworkCase, sol: &ScheduleSolution) -> f64 {
    dot(&case.cost_energy, &sol.g)
        + dot(&case.cost_reserve, &sol.r_plus)
        + dot(&case.cost_reserve, &sol.r_minus)
}

/// `Σ_j (λᴼ_j ε_j + mean_i sᴼ_ji)` recomputed from the stored blocks.
pub fn worst_case_term(solution: &ScheduleSolution, uq: &EmpiricalErrorModel) -> f64 {
    let eps = uq.epsilon.as_deref().unwrap_or(&[]);
    let ns = solution.s_o.cols();
    (0..solution.s_o.rows())
        .map(|j| {
            let e = eps.get(j).copied().unwrap_or(0.0);
            solution.lambda_o[j] * e + solution.s_o.row(j).iter().sum::<f64>() / ns as f64
        })
        .sum()
}
