use drcal_core::solver::{duality_gap, kkt_residuals};
use drcal_core::{solve, verify_kkt, SolveStatus, SolverOptions, SparseMatrix, StandardFormProgram};
use proptest::prelude::*;

fn dense(rows: &[&[f64]], ncols: usize) -> SparseMatrix {
    let owned: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    SparseMatrix::from_dense(&owned, ncols)
}

fn opts() -> SolverOptions {
    SolverOptions { tol: 1e-10, max_iters: 100 }
}

#[test]
fn single_lower_bound() {
    // min x  s.t. -x <= -1
    let mut p = StandardFormProgram::linear(vec![1.0]);
    p.ineq_matrix = dense(&[&[-1.0]], 1);
    p.ineq_rhs = vec![-1.0];
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal[0] - 1.0).abs() < 1e-8);
    assert!((sol.ineq_duals[0] - 1.0).abs() < 1e-8);
    assert!(verify_kkt(&p, &sol).unwrap().max() < 1e-8);
}

#[test]
fn unconstrained_quadratic() {
    // min ½x² - x
    let mut p = StandardFormProgram::linear(vec![-1.0]);
    p.quadratic_term = SparseMatrix::identity(1);
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal[0] - 1.0).abs() < 1e-10);
}

#[test]
fn inactive_bound_on_quadratic() {
    // min ½x² - x  s.t. x <= 5
    let mut p = StandardFormProgram::linear(vec![-1.0]);
    p.quadratic_term = SparseMatrix::identity(1);
    p.ineq_matrix = dense(&[&[1.0]], 1);
    p.ineq_rhs = vec![5.0];
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal[0] - 1.0).abs() < 1e-8);
    assert!(sol.ineq_duals[0].abs() < 1e-8);
}

#[test]
fn equality_and_bounds() {
    // min x0 + 2 x1  s.t. x0 + x1 = 3, 0 <= x <= 2
    let mut p = StandardFormProgram::linear(vec![1.0, 2.0]);
    p.eq_matrix = dense(&[&[1.0, 1.0]], 2);
    p.eq_rhs = vec![3.0];
    p.ineq_matrix = dense(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]], 2);
    p.ineq_rhs = vec![2.0, 2.0, 0.0, 0.0];
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal[0] - 2.0).abs() < 1e-8);
    assert!((sol.primal[1] - 1.0).abs() < 1e-8);
    // marginal cost of the balance is the price of x1
    assert!((sol.eq_duals[0] + 2.0).abs() < 1e-7);
    assert!(duality_gap(&p, &sol) < 1e-8);
}

#[test]
fn equality_only_quadratic() {
    // min ½‖x‖²  s.t. x0 + x1 = 2
    let mut p = StandardFormProgram::linear(vec![0.0, 0.0]);
    p.quadratic_term = SparseMatrix::identity(2);
    p.eq_matrix = dense(&[&[1.0, 1.0]], 2);
    p.eq_rhs = vec![2.0];
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal[0] - 1.0).abs() < 1e-10);
    assert!((sol.eq_duals[0] + 1.0).abs() < 1e-10);
}

#[test]
fn infeasible_program() {
    // x <= -1 and x >= 1
    let mut p = StandardFormProgram::linear(vec![1.0]);
    p.ineq_matrix = dense(&[&[1.0], &[-1.0]], 1);
    p.ineq_rhs = vec![-1.0, -1.0];
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn infeasible_with_equality() {
    // x0 + x1 = -1, x >= 0
    let mut p = StandardFormProgram::linear(vec![1.0, 1.0]);
    p.eq_matrix = dense(&[&[1.0, 1.0]], 2);
    p.eq_rhs = vec![-1.0];
    p.ineq_matrix = dense(&[&[-1.0, 0.0], &[0.0, -1.0]], 2);
    p.ineq_rhs = vec![0.0, 0.0];
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn unbounded_program() {
    // min -x0  s.t. x >= 0, x1 <= 1
    let mut p = StandardFormProgram::linear(vec![-1.0, 0.0]);
    p.ineq_matrix = dense(&[&[-1.0, 0.0], &[0.0, -1.0], &[0.0, 1.0]], 2);
    p.ineq_rhs = vec![0.0, 0.0, 1.0];
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Unbounded);
}

#[test]
fn rejects_bad_input() {
    let mut p = StandardFormProgram::linear(vec![1.0, 1.0]);
    p.ineq_matrix = dense(&[&[1.0]], 1);
    p.ineq_rhs = vec![1.0];
    assert!(solve(&p, &opts()).is_err());

    let mut p = StandardFormProgram::linear(vec![1.0, f64::NAN]);
    p.ineq_rhs = vec![];
    assert!(solve(&p, &opts()).is_err());

    let mut p = StandardFormProgram::linear(vec![0.0, 0.0]);
    p.quadratic_term = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]);
    assert!(solve(&p, &opts()).is_err());
}

#[test]
fn verify_kkt_detects_perturbations() {
    // min ½(x0² + x1²) - x0 - x1  s.t. x0 + x1 <= 1; optimum (½, ½), z = ½
    let mut p = StandardFormProgram::linear(vec![-1.0, -1.0]);
    p.quadratic_term = SparseMatrix::identity(2);
    p.ineq_matrix = dense(&[&[1.0, 1.0]], 2);
    p.ineq_rhs = vec![1.0];
    let exact = kkt_residuals(&p, &[0.5, 0.5], &[], &[0.5]).unwrap();
    assert!(exact.max() < 1e-15);

    let moved = kkt_residuals(&p, &[0.5 + 1e-3, 0.5], &[], &[0.5]).unwrap();
    assert!(moved.stationarity > 1e-4);

    let negative = kkt_residuals(&p, &[0.5, 0.5], &[], &[-0.5]).unwrap();
    assert!(negative.dual_feas > 0.1);

    let violated = kkt_residuals(&p, &[1.0, 1.0], &[], &[0.5]).unwrap();
    assert!(violated.primal_feas > 0.1);

    // LP with loose constraint but positive dual
    let mut lp = StandardFormProgram::linear(vec![1.0]);
    lp.ineq_matrix = dense(&[&[-1.0]], 1);
    lp.ineq_rhs = vec![-1.0];
    let slack = kkt_residuals(&lp, &[2.0], &[], &[1.0]).unwrap();
    assert!(slack.complementarity > 0.1);
    assert!(slack.stationarity < 1e-15);
}

#[test]
fn dump_lists_every_block() {
    let mut p = StandardFormProgram::linear(vec![1.0, 2.0]);
    p.ineq_matrix = dense(&[&[1.0, 0.0]], 2);
    p.ineq_rhs = vec![3.0];
    p.variable_names = Some(vec!["a".into(), "b".into()]);
    let text = drcal_core::solver::dump_program(&p);
    for block in ["P", "q", "A", "b", "G", "h", "names"] {
        assert!(text.contains(&format!("% block {block}\n")), "{block}");
    }
    assert!(text.contains("1 1 1e0"));
}

/// Minimum of a bounded 2-D LP by enumerating all constraint-pair vertices.
fn vertex_oracle(c: [f64; 2], rows: &[[f64; 2]], rhs: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a, b) = (rows[i], rows[j]);
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-9 {
                continue;
            }
            let x = (rhs[i] * b[1] - a[1] * rhs[j]) / det;
            let y = (a[0] * rhs[j] - rhs[i] * b[0]) / det;
            let feasible = rows.iter().zip(rhs).all(|(r, h)| r[0] * x + r[1] * y <= h + 1e-9);
            if feasible {
                best = best.min(c[0] * x + c[1] * y);
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polytope_matches_vertex_enumeration(
        c in prop::array::uniform2(-5.0..5.0f64),
        cuts in prop::collection::vec((prop::array::uniform2(-1.0..1.0f64), 0.2..2.0f64), 0..6),
    ) {
        // a box around the origin keeps the polytope bounded and nonempty
        let mut rows = vec![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let mut rhs = vec![3.0, 3.0, 3.0, 3.0];
        for (a, h) in cuts {
            rows.push(a);
            rhs.push(h);
        }
        let mut p = StandardFormProgram::linear(c.to_vec());
        let dense_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        p.ineq_matrix = SparseMatrix::from_dense(&dense_rows, 2);
        p.ineq_rhs = rhs.clone();
        let sol = solve(&p, &opts()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let oracle = vertex_oracle(c, &rows, &rhs);
        prop_assert!((sol.objective - oracle).abs() < 1e-7 * (1.0 + oracle.abs()),
            "ipm {} oracle {}", sol.objective, oracle);
    }

    #[test]
    fn random_qp_with_interior_point_converges(
        n in 2usize..6,
        seed_rows in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 1..8),
        center in prop::collection::vec(-1.0..1.0f64, 6),
        diag in prop::collection::vec(0.0..2.0f64, 6),
        q in prop::collection::vec(-3.0..3.0f64, 6),
    ) {
        let x0 = &center[..n];
        let mut rows: Vec<Vec<f64>> = seed_rows.iter().map(|r| r[..n].to_vec()).collect();
        // bounds keep the LP part bounded even with a singular quadratic
        for i in 0..n {
            let mut up = vec![0.0; n];
            up[i] = 1.0;
            rows.push(up.clone());
            up[i] = -1.0;
            rows.push(up);
        }
        let rhs: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(x0).map(|(a, b)| a * b).sum::<f64>() + 0.5)
            .collect();
        let mut p = StandardFormProgram::linear(q[..n].to_vec());
        let trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, diag[i])).collect();
        p.quadratic_term = SparseMatrix::from_triplets(n, n, &trip);
        p.ineq_matrix = SparseMatrix::from_dense(&rows, n);
        p.ineq_rhs = rhs;
        let sol = solve(&p, &opts()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        prop_assert!(verify_kkt(&p, &sol).unwrap().max() < 1e-8);
        prop_assert!(duality_gap(&p, &sol) < 1e-8);

        // scaling the cost scales the duals and leaves the primal alone
        let mut scaled = p.clone();
        scaled.linear_cost.iter_mut().for_each(|v| *v *= 3.0);
        let trip3: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 3.0 * diag[i])).collect();
        scaled.quadratic_term = SparseMatrix::from_triplets(n, n, &trip3);
        let sol3 = solve(&scaled, &opts()).unwrap();
        prop_assert!((sol3.objective - 3.0 * sol.objective).abs() < 1e-6 * (1.0 + sol.objective.abs()));

        // repeated solves are bitwise identical
        let again = solve(&p, &opts()).unwrap();
        prop_assert_eq!(again.primal, sol.primal);
    }
}
