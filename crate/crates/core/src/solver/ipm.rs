//! Mehrotra predictor-corrector iterations from an infeasible start.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, dot, norm_inf};

use super::kkt::ReducedKkt;
use super::{kkt_residuals, KktResiduals, SolveStatus, SolverOptions, SolverSolution, StandardFormProgram};

const STEP_FRACTION: f64 = 0.99;
const CERT_TOL: f64 = 1e-8;
const BLOWUP: f64 = 1e12;
const MAX_STALLS: usize = 5;
const REFINE_STEPS: usize = 3;
/// Relative diagonal shifts tried in turn when the Newton direction is
/// inaccurate.
const REG_LADDER: [f64; 5] = [0.0, 1e-14, 1e-12, 1e-10, 1e-8];
const DIRECTION_TOL: f64 = 1e-8;
/// Sensitivity solves keep inequality rows with `z/s` above this multiple of
/// the Hessian scale out of the reduced matrix.
const SPLIT_WEIGHT: f64 = 1e6;

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

struct Residuals {
    dual: Vec<f64>,
    eq: Vec<f64>,
    ineq: Vec<f64>,
    pres: f64,
    dres: f64,
    gap: f64,
    mu: f64,
}

pub(super) fn run(program: &StandardFormProgram, options: &SolverOptions) -> SolverSolution {
    if program.num_ineq() == 0 {
        return equality_only(program);
    }
    let mut it = initial_point(program);
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;
    let mut stalls = 0;
    let scale_q = norm_inf(&program.linear_cost);
    let scale_bh = norm_inf(&program.eq_rhs).max(norm_inf(&program.ineq_rhs));

    loop {
        let res = residuals(program, &it);
        if res.pres <= options.tol && res.dres <= options.tol && res.gap <= options.tol {
            status = SolveStatus::Optimal;
            break;
        }
        if res.pres > options.tol && primal_infeasible(program, &it, scale_bh) {
            status = SolveStatus::Infeasible;
            break;
        }
        if res.dres > options.tol && unbounded(program, &it, scale_q, scale_bh) {
            status = SolveStatus::Unbounded;
            break;
        }
        if iterations >= options.max_iters {
            break;
        }
        iterations += 1;
        log::trace!(
            "ipm {iterations}: pres {:.2e} dres {:.2e} gap {:.2e} mu {:.2e}",
            res.pres,
            res.dres,
            res.gap,
            res.mu
        );

        let weights: Vec<f64> = it.z.iter().zip(&it.s).map(|(z, s)| z / s).collect();
        let rx: Vec<f64> = res.dual.iter().map(|v| -v).collect();
        let ry: Vec<f64> = res.eq.iter().map(|v| -v).collect();
        let m = it.s.len() as f64;

        let mut chosen = None;
        for (attempt, &rho) in REG_LADDER.iter().enumerate() {
            let kkt = ReducedKkt::factor_regularized(program, &weights, rho);
            let last = attempt + 1 == REG_LADDER.len();

            // affine-scaling predictor
            let rc_aff: Vec<f64> = it.s.iter().zip(&it.z).map(|(s, z)| -s * z).collect();
            let ((_, _, dz_a, ds_a), ok_a) = newton(program, &kkt, &it, &rx, &ry, &res.ineq, &rc_aff);
            if !ok_a && !last {
                continue;
            }
            let alpha_aff = max_step(&it.s, &ds_a).min(max_step(&it.z, &dz_a)).min(1.0);
            let mu_aff: f64 = it
                .s
                .iter()
                .zip(&ds_a)
                .zip(it.z.iter().zip(&dz_a))
                .map(|((s, ds), (z, dz))| (s + alpha_aff * ds) * (z + alpha_aff * dz))
                .sum::<f64>()
                / m;
            let ratio = (mu_aff / res.mu).clamp(0.0, 1.0);
            let sigma = ratio * ratio * ratio;

            // centering-corrector
            let rc: Vec<f64> = (0..it.s.len())
                .map(|i| -it.s[i] * it.z[i] + sigma * res.mu - ds_a[i] * dz_a[i])
                .collect();
            let (dir, ok) = newton(program, &kkt, &it, &rx, &ry, &res.ineq, &rc);
            if ok || last {
                if attempt > 0 {
                    log::trace!("    regularized Newton system, rho {rho:.0e}");
                }
                chosen = Some((dir, sigma, alpha_aff));
                break;
            }
        }
        let Some(((dx, dy, dz, ds), sigma, alpha_aff)) = chosen else { break };
        let alpha = (STEP_FRACTION * max_step(&it.s, &ds).min(max_step(&it.z, &dz))).min(1.0);

        let finite = [&dx, &dy, &dz, &ds].iter().all(|v| crate::math::all_finite(v));
        if !finite {
            log::debug!("interior point: non-finite Newton direction at iteration {iterations}");
            break;
        }
        log::trace!("    sigma {sigma:.2e} alpha_aff {alpha_aff:.2e} alpha {alpha:.2e}");
        axpy(&mut it.x, alpha, &dx);
        axpy(&mut it.y, alpha, &dy);
        axpy(&mut it.z, alpha, &dz);
        axpy(&mut it.s, alpha, &ds);

        if alpha < 1e-8 {
            stalls += 1;
            if stalls >= MAX_STALLS {
                log::debug!("interior point: stalled at iteration {iterations}");
                break;
            }
        } else {
            stalls = 0;
        }
    }
    finish(program, it, status, iterations)
}

/// Differentiates the optimality conditions at a returned solution: solves
/// `P dx + Eᵀdy + Gᵀdz = rx`, `E dx = ry`, `G dx + ds = −r_g`,
/// `z∘ds + s∘dz = 0` for each right-hand side. Returns the `dx` blocks and
/// the diagonal shift that was needed, or `None` if no shift on the ladder
/// gives an accurate solve.
pub(super) fn linearized_solve(
    program: &StandardFormProgram,
    solution: &SolverSolution,
    rhs: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
) -> Option<(Vec<Vec<f64>>, f64)> {
    let it = Iterate {
        x: solution.primal.clone(),
        y: solution.eq_duals.clone(),
        z: solution.ineq_duals.clone(),
        s: solution.ineq_slacks.clone(),
    };
    if it.z.iter().chain(&it.s).any(|v| !(*v > 0.0)) {
        return None;
    }
    let weights: Vec<f64> = it.z.iter().zip(&it.s).map(|(z, s)| z / s).collect();
    let rc = vec![0.0; it.s.len()];
    let split_at = SPLIT_WEIGHT * program.quadratic_term.max_abs().max(1.0);
    let plain = ReducedKkt::factor(program, &weights);
    if let Some(out) = solve_all(program, &plain, &it, rhs, &rc) {
        return Some((out, 0.0));
    }
    let split = ReducedKkt::factor_split(program, &weights, split_at);
    if let Some(out) = solve_all(program, &split, &it, rhs, &rc) {
        return Some((out, 0.0));
    }
    REG_LADDER[1..].iter().find_map(|&rho| {
        let kkt = ReducedKkt::factor_regularized(program, &weights, rho);
        solve_all(program, &kkt, &it, rhs, &rc).map(|out| (out, rho))
    })
}

fn solve_all(
    program: &StandardFormProgram,
    kkt: &ReducedKkt<'_>,
    it: &Iterate,
    rhs: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
    rc: &[f64],
) -> Option<Vec<Vec<f64>>> {
    rhs.iter()
        .map(|(rx, ry, r_g)| {
            let ((dx, ..), ok) = newton(program, kkt, it, rx, ry, r_g, rc);
            ok.then_some(dx)
        })
        .collect()
}

fn finish(program: &StandardFormProgram, it: Iterate, status: SolveStatus, iterations: usize) -> SolverSolution {
    let kkt_residuals =
        kkt_residuals(program, &it.x, &it.y, &it.z).unwrap_or_else(|_| KktResiduals::default());
    SolverSolution {
        objective: program.objective(&it.x),
        primal: it.x,
        eq_duals: it.y,
        ineq_duals: it.z,
        ineq_slacks: it.s,
        status,
        kkt_residuals,
        iterations,
    }
}

/// Solves `P dx + Eᵀdy + Gᵀdz = rx`, `E dx = ry`, `G dx + ds = -r_g`,
/// `z∘ds + s∘dz = rc`, refining against the unreduced system because the
/// reduced matrix loses accuracy once `z/s` spans many orders of magnitude.
fn newton(
    program: &StandardFormProgram,
    kkt: &ReducedKkt<'_>,
    it: &Iterate,
    rx: &[f64],
    ry: &[f64],
    r_g: &[f64],
    rc: &[f64],
) -> ((Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), bool) {
    let mut dir = newton_reduced(kkt, it, rx, ry, r_g, rc);
    let scale = 1.0
        + norm_inf(rx)
            .max(norm_inf(ry))
            .max(norm_inf(r_g))
            .max(rc.iter().zip(&it.z).fold(0.0_f64, |m, (r, z)| m.max(abs(r / z))));
    let mut best = f64::INFINITY;
    let mut prev = None;
    for step in 0..=REFINE_STEPS {
        let (dx, dy, dz, ds) = &dir;
        let mut r1 = program.quadratic_term.mul_vec(dx);
        for (r, v) in r1.iter_mut().zip(program.eq_matrix.tr_mul_vec(dy)) {
            *r += v;
        }
        for (r, v) in r1.iter_mut().zip(program.ineq_matrix.tr_mul_vec(dz)) {
            *r += v;
        }
        for (r, v) in r1.iter_mut().zip(rx) {
            *r = v - *r;
        }
        let r2: Vec<f64> =
            program.eq_matrix.mul_vec(dx).iter().zip(ry).map(|(a, b)| b - a).collect();
        // in the `-r_g` convention of `newton_reduced`
        let r3: Vec<f64> = program
            .ineq_matrix
            .mul_vec(dx)
            .iter()
            .zip(ds)
            .zip(r_g)
            .map(|((gdx, d), rg)| gdx + d + rg)
            .collect();
        let r4: Vec<f64> =
            (0..rc.len()).map(|i| rc[i] - it.z[i] * ds[i] - it.s[i] * dz[i]).collect();
        let scaled4 = r4.iter().zip(&it.z).fold(0.0_f64, |m, (r, z)| m.max(abs(r / z)));
        let size = norm_inf(&r1).max(norm_inf(&r2)).max(norm_inf(&r3)).max(scaled4);
        if !(size < best) {
            if let Some(p) = prev.take() {
                dir = p;
            }
            break;
        }
        let slow = size > 0.5 * best;
        best = size;
        if step == REFINE_STEPS || size <= 1e-15 * scale || (step > 0 && slow) {
            break;
        }
        prev = Some(dir.clone());
        let corr = newton_reduced(kkt, it, &r1, &r2, &r3, &r4);
        for (a, b) in [(&mut dir.0, &corr.0), (&mut dir.1, &corr.1), (&mut dir.2, &corr.2), (&mut dir.3, &corr.3)] {
            axpy(a, 1.0, b);
        }
    }
    let ok = best <= DIRECTION_TOL * scale && [&dir.0, &dir.1, &dir.2, &dir.3].iter().all(|v| crate::math::all_finite(v));
    (dir, ok)
}

fn newton_reduced(
    kkt: &ReducedKkt<'_>,
    it: &Iterate,
    rx: &[f64],
    ry: &[f64],
    r_g: &[f64],
    rc: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let rz: Vec<f64> = (0..rc.len()).map(|i| -r_g[i] - rc[i] / it.z[i]).collect();
    let (dx, dy, dz) = kkt.solve_full(rx, ry, &rz);
    let ds: Vec<f64> = (0..rc.len()).map(|i| (rc[i] - it.s[i] * dz[i]) / it.z[i]).collect();
    (dx, dy, dz, ds)
}

fn initial_point(program: &StandardFormProgram) -> Iterate {
    let ones = vec![1.0; program.num_ineq()];
    let kkt = ReducedKkt::factor(program, &ones);
    let gth = program.ineq_matrix.tr_mul_vec(&program.ineq_rhs);
    let rx: Vec<f64> = program.linear_cost.iter().zip(&gth).map(|(q, g)| -q + g).collect();
    let (x, y) = kkt.solve(&rx, &program.eq_rhs);
    let gx = program.ineq_matrix.mul_vec(&x);
    let mut s: Vec<f64> = program.ineq_rhs.iter().zip(&gx).map(|(h, g)| h - g).collect();
    let mut z: Vec<f64> = s.iter().map(|v| -v).collect();
    shift_positive(&mut s);
    shift_positive(&mut z);
    Iterate { x, y, z, s }
}

fn shift_positive(v: &mut [f64]) {
    let worst = v.iter().fold(f64::NEG_INFINITY, |m, a| m.max(-a));
    if worst >= 0.0 {
        for a in v.iter_mut() {
            *a += 1.0 + worst;
        }
    }
}

fn residuals(program: &StandardFormProgram, it: &Iterate) -> Residuals {
    let mut dual = program.quadratic_term.mul_vec(&it.x);
    for (d, q) in dual.iter_mut().zip(&program.linear_cost) {
        *d += q;
    }
    for (d, v) in dual.iter_mut().zip(program.eq_matrix.tr_mul_vec(&it.y)) {
        *d += v;
    }
    for (d, v) in dual.iter_mut().zip(program.ineq_matrix.tr_mul_vec(&it.z)) {
        *d += v;
    }
    let eq: Vec<f64> =
        program.eq_matrix.mul_vec(&it.x).iter().zip(&program.eq_rhs).map(|(a, b)| a - b).collect();
    let ineq: Vec<f64> = program
        .ineq_matrix
        .mul_vec(&it.x)
        .iter()
        .zip(&it.s)
        .zip(&program.ineq_rhs)
        .map(|((gx, s), h)| gx + s - h)
        .collect();
    let pres = (norm_inf(&eq) / (1.0 + norm_inf(&program.eq_rhs)))
        .max(norm_inf(&ineq) / (1.0 + norm_inf(&program.ineq_rhs)));
    let dres = norm_inf(&dual) / (1.0 + norm_inf(&program.linear_cost));
    let sz = dot(&it.s, &it.z);
    let gap = sz / (1.0 + abs(program.objective(&it.x)));
    let mu = sz / it.s.len() as f64;
    Residuals { dual, eq, ineq, pres, dres, gap, mu }
}

/// Farkas certificate: `Eᵀy + Gᵀz ≈ 0` with `bᵀy + hᵀz < 0`.
fn primal_infeasible(program: &StandardFormProgram, it: &Iterate, scale_bh: f64) -> bool {
    let t = -(dot(&program.eq_rhs, &it.y) + dot(&program.ineq_rhs, &it.z));
    if !(t > 0.0) {
        return false;
    }
    let mut ray = program.eq_matrix.tr_mul_vec(&it.y);
    for (r, v) in ray.iter_mut().zip(program.ineq_matrix.tr_mul_vec(&it.z)) {
        *r += v;
    }
    let size = norm_inf(&it.y).max(norm_inf(&it.z));
    norm_inf(&ray) * scale_bh.max(1.0) / t <= CERT_TOL || size > BLOWUP * (1.0 + scale_bh) && t > 0.0
}

/// Improving ray: `Pd = 0`, `Ed = 0`, `Gd <= 0`, `qᵀd < 0`, tested on the
/// iterate itself once it has grown large.
fn unbounded(program: &StandardFormProgram, it: &Iterate, scale_q: f64, scale_bh: f64) -> bool {
    let t = -dot(&program.linear_cost, &it.x);
    if !(t > 0.0) {
        return false;
    }
    let xn = norm_inf(&it.x);
    if xn <= 1e3 * (1.0 + scale_bh) {
        return false;
    }
    let px = norm_inf(&program.quadratic_term.mul_vec(&it.x));
    let ex = program
        .eq_matrix
        .mul_vec(&it.x)
        .iter()
        .zip(&program.eq_rhs)
        .fold(0.0_f64, |m, (a, b)| m.max(abs(a - b)));
    let gx = program
        .ineq_matrix
        .mul_vec(&it.x)
        .iter()
        .zip(&program.ineq_rhs)
        .fold(0.0_f64, |m, (a, h)| m.max(a - h));
    let viol = px.max(ex).max(gx);
    viol * scale_q.max(1.0) / t <= CERT_TOL || xn > BLOWUP * (1.0 + scale_bh)
}

fn equality_only(program: &StandardFormProgram) -> SolverSolution {
    let kkt = ReducedKkt::factor(program, &[]);
    let rx: Vec<f64> = program.linear_cost.iter().map(|q| -q).collect();
    let (x, y) = kkt.solve(&rx, &program.eq_rhs);
    let it = Iterate { x, y, z: Vec::new(), s: Vec::new() };
    let res = residuals(program, &it);
    let status = if res.pres <= 1e-8 && res.dres <= 1e-8 {
        SolveStatus::Optimal
    } else if res.pres > 1e-8 {
        SolveStatus::Infeasible
    } else {
        SolveStatus::Unbounded
    };
    finish(program, it, status, 1)
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(a, d)| -a / d)
        .fold(f64::INFINITY, f64::min)
}

fn axpy(v: &mut [f64], a: f64, d: &[f64]) {
    for (x, dx) in v.iter_mut().zip(d) {
        *x += a * dx;
    }
}
