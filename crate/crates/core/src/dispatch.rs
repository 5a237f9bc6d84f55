//! Stage two: real-time dispatch against a fixed schedule.
//!
//! Variables: `r_in⁺`, `r_in⁻`, `r_out⁺`, `r_out⁻` (one per generator each),
//! then, with load shedding enabled, a shed and a spill injection per bus.
//! The generator adjustment is `R = r_in⁺ − r_in⁻ + r_out⁺ − r_out⁻`.
//!
//! Inequality rows, in order: `μ̄`, `μ̲` (generator bounds), `φ̄`, `φ̲` (line
//! limits, upper row first), `ν̄`, `ν̲` (reserve box on `r_in`), then the
//! nonnegativity rows.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::NetworkCase;
use crate::schedule::ScheduleSolution;
use crate::solver::{solve, SolveStatus, SolverError, SolverOptions, SolverSolution, StandardFormProgram};
use crate::sparse::SparseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("schedule is not optimal ({0:?})")]
    ScheduleNotOptimal(SolveStatus),
    #[error("realized wind of farm {farm} is {value} MW, outside [0, {capacity}]")]
    RealizedOutOfRange { farm: usize, value: f64, capacity: f64 },
    #[error("invalid option: {0}")]
    InvalidOption(&'static str),
    #[error("dispatch infeasible, {unmet_mw:.6} MW of imbalance cannot be covered")]
    InfeasibleDispatch { unmet_mw: f64 },
    #[error("dispatch solve did not converge ({status:?}, KKT residual {residual:e})")]
    NotConverged { status: SolveStatus, residual: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchOptions {
    pub solver: SolverOptions,
    /// Price of the per-bus slack injections. `None` makes an uncoverable
    /// imbalance a hard error.
    pub load_shed_cost: Option<f64>,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self { solver: SolverOptions { tol: 1e-9, max_iters: 200 }, load_shed_cost: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DispatchDuals {
    pub lambda: f64,
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    pub phi_lo: Vec<f64>,
    pub phi_hi: Vec<f64>,
    pub nu_lo: Vec<f64>,
    pub nu_hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    /// Signed, `r_in⁺ − r_in⁻`.
    pub r_in: Vec<f64>,
    pub r_in_up: Vec<f64>,
    pub r_in_dn: Vec<f64>,
    pub r_out_up: Vec<f64>,
    pub r_out_dn: Vec<f64>,
    /// Net slack injection per bus (shed minus spill); empty without load shedding.
    pub slack_injection: Vec<f64>,
    /// Total absolute slack, MW.
    pub shed_load: f64,
    /// Optimal objective, slack penalty included.
    pub cost: f64,
    pub duals: DispatchDuals,
    pub status: SolveStatus,
    /// Schedule the dispatch was solved against (reserves clamped at zero).
    pub g: Vec<f64>,
    pub r_plus: Vec<f64>,
    pub r_minus: Vec<f64>,
}

/// `∂cost/∂g*`, `∂cost/∂r⁺*`, `∂cost/∂r⁻*` per generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchPartials {
    pub d_g: Vec<f64>,
    pub d_r_plus: Vec<f64>,
    pub d_r_minus: Vec<f64>,
}

impl DispatchPartials {
    /// Stacked in `G = (g, r⁺, r⁻)` order.
    pub fn stacked(&self) -> Vec<f64> {
        let mut out = self.d_g.clone();
        out.extend_from_slice(&self.d_r_plus);
        out.extend_from_slice(&self.d_r_minus);
        out
    }
}

struct Rows {
    mu_hi: usize,
    mu_lo: usize,
    phi_hi: usize,
    phi_lo: usize,
    nu_hi: usize,
    nu_lo: usize,
}

impl Rows {
    fn new(ng: usize, nl: usize) -> Self {
        Self { mu_hi: 0, mu_lo: ng, phi_hi: 2 * ng, phi_lo: 2 * ng + nl, nu_hi: 2 * ng + 2 * nl, nu_lo: 3 * ng + 2 * nl }
    }
}

/// Solves the dispatch for a stage-one solution.
pub fn solve_dispatch(
    case: &NetworkCase,
    schedule: &ScheduleSolution,
    realized: &[f64],
    options: &DispatchOptions,
) -> Result<DispatchSolution, DispatchError> {
    if schedule.status != SolveStatus::Optimal {
        return Err(DispatchError::ScheduleNotOptimal(schedule.status));
    }
    solve_dispatch_for(case, &schedule.g, &schedule.r_plus, &schedule.r_minus, realized, options)
}

/// Same as [`solve_dispatch`] with the schedule given as plain vectors.
/// Reserves are clamped at zero first, so solver round-off cannot make the
/// reserve box empty.
pub fn solve_dispatch_for(
    case: &NetworkCase,
    g: &[f64],
    r_plus: &[f64],
    r_minus: &[f64],
    realized: &[f64],
    options: &DispatchOptions,
) -> Result<DispatchSolution, DispatchError> {
    let ng = case.n_generators;
    if g.len() != ng || r_plus.len() != ng || r_minus.len() != ng {
        return Err(DispatchError::DimensionMismatch("schedule vs generators"));
    }
    if realized.len() != case.n_wind {
        return Err(DispatchError::DimensionMismatch("realized wind vs farms"));
    }
    for (farm, (y, cap)) in realized.iter().zip(&case.wind_capacity).enumerate() {
        if !(0.0..=*cap).contains(y) {
            return Err(DispatchError::RealizedOutOfRange { farm, value: *y, capacity: *cap });
        }
    }
    if let Some(c) = options.load_shed_cost {
        let floor = 10.0 * case.cost_energy.iter().cloned().fold(0.0, f64::max);
        if !(c > floor) || !c.is_finite() {
            return Err(DispatchError::InvalidOption("load-shed cost must exceed 10 × the largest energy cost"));
        }
    }
    let r_plus: Vec<f64> = r_plus.iter().map(|v| v.max(0.0)).collect();
    let r_minus: Vec<f64> = r_minus.iter().map(|v| v.max(0.0)).collect();

    let program = build_dispatch_program(case, g, &r_plus, &r_minus, realized, options.load_shed_cost);
    let raw = solve(&program, &options.solver)?;
    match raw.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            let unmet_mw = unmet_imbalance(case, g, &r_plus, &r_minus, realized, &options.solver)?;
            return Err(DispatchError::InfeasibleDispatch { unmet_mw });
        }
        status => {
            return Err(DispatchError::NotConverged { status, residual: raw.kkt_residuals.max() })
        }
    }
    Ok(finish(case, &program, raw, g, r_plus, r_minus, options.load_shed_cost.is_some()))
}

/// Assembles the dispatch LP. `shed_cost` adds the per-bus slack injections.
pub fn build_dispatch_program(
    case: &NetworkCase,
    g: &[f64],
    r_plus: &[f64],
    r_minus: &[f64],
    realized: &[f64],
    shed_cost: Option<f64>,
) -> StandardFormProgram {
    let (ng, nl, nb) = (case.n_generators, case.n_lines, case.n_buses);
    let n_slack = if shed_cost.is_some() { 2 * nb } else { 0 };
    let nv = 4 * ng + n_slack;
    let (in_up, in_dn, out_up, out_dn, shed, spill) = (0, ng, 2 * ng, 3 * ng, 4 * ng, 4 * ng + nb);
    // columns of the net adjustment R with their signs
    let adjust = [(in_up, 1.0), (in_dn, -1.0), (out_up, 1.0), (out_dn, -1.0)];

    let mut cost = vec![0.0; nv];
    for k in 0..ng {
        cost[in_up + k] = case.cost_in[k];
        cost[in_dn + k] = case.cost_in[k];
        cost[out_up + k] = case.cost_out_up[k];
        cost[out_dn + k] = case.cost_out_dn[k];
    }
    if let Some(c) = shed_cost {
        for b in 0..nb {
            cost[shed + b] = c;
            cost[spill + b] = c;
        }
    }

    let mut eq = Vec::new();
    for k in 0..ng {
        for (off, s) in adjust {
            eq.push((0, off + k, s));
        }
    }
    if shed_cost.is_some() {
        for b in 0..nb {
            eq.push((0, shed + b, 1.0));
            eq.push((0, spill + b, -1.0));
        }
    }
    let rhs_balance = case.total_demand() - g.iter().sum::<f64>() - realized.iter().sum::<f64>();

    let rows = Rows::new(ng, nl);
    let n_ineq = 4 * ng + 2 * nl + nv;
    let mut gt = Vec::new();
    let mut h = vec![0.0; n_ineq];
    for k in 0..ng {
        for (off, s) in adjust {
            gt.push((rows.mu_hi + k, off + k, s));
            gt.push((rows.mu_lo + k, off + k, -s));
        }
        h[rows.mu_hi + k] = case.gen_max[k] - g[k];
        h[rows.mu_lo + k] = g[k] - case.gen_min[k];
    }
    let base = case.line_flows(g, realized);
    for l in 0..nl {
        for k in 0..ng {
            let phi = case.ptdf[(l, case.gen_bus[k])];
            if phi != 0.0 {
                for (off, s) in adjust {
                    gt.push((rows.phi_hi + l, off + k, s * phi));
                    gt.push((rows.phi_lo + l, off + k, -s * phi));
                }
            }
        }
        if shed_cost.is_some() {
            for b in 0..nb {
                let phi = case.ptdf[(l, b)];
                if phi != 0.0 {
                    gt.push((rows.phi_hi + l, shed + b, phi));
                    gt.push((rows.phi_hi + l, spill + b, -phi));
                    gt.push((rows.phi_lo + l, shed + b, -phi));
                    gt.push((rows.phi_lo + l, spill + b, phi));
                }
            }
        }
        h[rows.phi_hi + l] = case.line_limit[l] - base[l];
        h[rows.phi_lo + l] = case.line_limit[l] + base[l];
    }
    for k in 0..ng {
        gt.push((rows.nu_hi + k, in_up + k, 1.0));
        gt.push((rows.nu_hi + k, in_dn + k, -1.0));
        gt.push((rows.nu_lo + k, in_up + k, -1.0));
        gt.push((rows.nu_lo + k, in_dn + k, 1.0));
        h[rows.nu_hi + k] = r_plus[k];
        h[rows.nu_lo + k] = r_minus[k];
    }
    let nonneg = 4 * ng + 2 * nl;
    for v in 0..nv {
        gt.push((nonneg + v, v, -1.0));
    }

    StandardFormProgram {
        quadratic_term: SparseMatrix::empty(nv, nv),
        linear_cost: cost,
        eq_matrix: SparseMatrix::from_triplets(1, nv, &eq),
        eq_rhs: vec![rhs_balance],
        ineq_matrix: SparseMatrix::from_triplets(n_ineq, nv, &gt),
        ineq_rhs: h,
        variable_names: None,
    }
}

/// Smallest total slack that restores feasibility.
fn unmet_imbalance(
    case: &NetworkCase,
    g: &[f64],
    r_plus: &[f64],
    r_minus: &[f64],
    realized: &[f64],
    solver: &SolverOptions,
) -> Result<f64, DispatchError> {
    let mut program = build_dispatch_program(case, g, r_plus, r_minus, realized, Some(1.0));
    let ng = case.n_generators;
    for c in &mut program.linear_cost[..4 * ng] {
        *c = 0.0;
    }
    let raw = solve(&program, solver)?;
    if raw.status != SolveStatus::Optimal {
        return Err(DispatchError::NotConverged { status: raw.status, residual: raw.kkt_residuals.max() });
    }
    Ok(raw.objective)
}

fn finish(
    case: &NetworkCase,
    program: &StandardFormProgram,
    raw: SolverSolution,
    g: &[f64],
    r_plus: Vec<f64>,
    r_minus: Vec<f64>,
    shedding: bool,
) -> DispatchSolution {
    let (ng, nl, nb) = (case.n_generators, case.n_lines, case.n_buses);
    let x = &raw.primal;
    let z = &raw.ineq_duals;
    let rows = Rows::new(ng, nl);
    let block = |start: usize, len: usize| x[start..start + len].to_vec();
    let r_in_up = block(0, ng);
    let r_in_dn = block(ng, ng);
    let (slack_injection, shed_load) = if shedding {
        let inj: Vec<f64> = (0..nb).map(|b| x[4 * ng + b] - x[4 * ng + nb + b]).collect();
        let total = x[4 * ng..4 * ng + 2 * nb].iter().map(|v| v.abs()).sum();
        (inj, total)
    } else {
        (Vec::new(), 0.0)
    };
    let duals = DispatchDuals {
        lambda: raw.eq_duals[0],
        mu_lo: z[rows.mu_lo..rows.mu_lo + ng].to_vec(),
        mu_hi: z[rows.mu_hi..rows.mu_hi + ng].to_vec(),
        phi_lo: z[rows.phi_lo..rows.phi_lo + nl].to_vec(),
        phi_hi: z[rows.phi_hi..rows.phi_hi + nl].to_vec(),
        nu_lo: z[rows.nu_lo..rows.nu_lo + ng].to_vec(),
        nu_hi: z[rows.nu_hi..rows.nu_hi + ng].to_vec(),
    };
    DispatchSolution {
        r_in: r_in_up.iter().zip(&r_in_dn).map(|(a, b)| a - b).collect(),
        r_in_up,
        r_in_dn,
        r_out_up: block(2 * ng, ng),
        r_out_dn: block(3 * ng, ng),
        slack_injection,
        shed_load,
        cost: program.objective(x),
        duals,
        status: raw.status,
        g: g.to_vec(),
        r_plus,
        r_minus,
    }
}

/// Envelope-theorem partials of the optimal dispatch cost:
/// `∂/∂g* = λ1 − μ̲ + μ̄ + S_gᵀΦᵀ(φ̄ − φ̲)`, `∂/∂r⁺* = −ν̄`, `∂/∂r⁻* = −ν̲`.
pub fn dispatch_value_partials(solution: &DispatchSolution, case: &NetworkCase) -> DispatchPartials {
    let d = &solution.duals;
    let d_g = (0..case.n_generators)
        .map(|k| {
            let flow: f64 = (0..case.n_lines)
                .map(|l| case.ptdf[(l, case.gen_bus[k])] * (d.phi_hi[l] - d.phi_lo[l]))
                .sum();
            d.lambda - d.mu_lo[k] + d.mu_hi[k] + flow
        })
        .collect();
    DispatchPartials {
        d_g,
        d_r_plus: d.nu_hi.iter().map(|v| -v).collect(),
        d_r_minus: d.nu_lo.iter().map(|v| -v).collect(),
    }
}
