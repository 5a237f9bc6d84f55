//! Reduced Newton system shared by the interior-point iterations and the
//! schedule-layer differentiation.
//!
//! With inequality weights `d = z / s` the full system
//!
//! ```text
//! [ P   Eᵀ  Gᵀ    ] [dx]   [rx]
//! [ E   0   0     ] [dy] = [ry]
//! [ G   0  -D⁻¹   ] [dz]   [rz]
//! ```
//!
//! reduces to `[P + GᵀDG, Eᵀ; E, 0]` after eliminating `dz`. Rows whose
//! weight is very large can instead be kept next to `E` with their `-D⁻¹`
//! diagonal, which avoids putting huge entries into the Cholesky factor.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::{Cholesky, SymMatrix};
use crate::math::norm_inf;

use super::StandardFormProgram;

const REFINE_STEPS: usize = 6;

pub(crate) struct ReducedKkt<'a> {
    program: &'a StandardFormProgram,
    weights: Vec<f64>,
    /// Inequality rows kept unreduced, in the order they follow `E`.
    kept: Vec<usize>,
    hessian: SymMatrix,
    chol: Cholesky,
    /// `H⁻¹ Cᵀ` per constraint row, where `C = [E; G_kept]`.
    hinv_ct: Vec<Vec<f64>>,
    schur: Option<Cholesky>,
}

impl<'a> ReducedKkt<'a> {
    pub fn factor(program: &'a StandardFormProgram, weights: &[f64]) -> Self {
        Self::build(program, weights, 0.0, Vec::new())
    }

    /// Factors `H + rho·max_diag(H)·I` but keeps the unshifted `H` for the
    /// refinement residuals, so a small shift only slows refinement down.
    pub fn factor_regularized(program: &'a StandardFormProgram, weights: &[f64], rho: f64) -> Self {
        Self::build(program, weights, rho, Vec::new())
    }

    /// Keeps rows with weight above `threshold` out of the Hessian.
    pub fn factor_split(program: &'a StandardFormProgram, weights: &[f64], threshold: f64) -> Self {
        let kept = (0..weights.len()).filter(|&r| weights[r] > threshold).collect();
        Self::build(program, weights, 0.0, kept)
    }

    fn build(program: &'a StandardFormProgram, weights: &[f64], rho: f64, kept: Vec<usize>) -> Self {
        let n = program.num_vars();
        let mut hessian = SymMatrix::zeros(n);
        for (r, c, v) in program.quadratic_term.triplets() {
            if c <= r {
                hessian.add(r, c, v);
            }
        }
        let g = &program.ineq_matrix;
        let mut is_kept = vec![false; weights.len()];
        for &r in &kept {
            is_kept[r] = true;
        }
        for (r, w) in weights.iter().enumerate() {
            if !is_kept[r] {
                g.add_weighted_row_outer(r, *w, &mut hessian);
            }
        }
        let chol = if rho > 0.0 {
            let n = hessian.dim();
            let shift = rho * (0..n).fold(1.0_f64, |m, i| m.max(hessian.diag(i)));
            let mut shifted = hessian.clone();
            for i in 0..n {
                shifted.add(i, i, shift);
            }
            Cholesky::factor(&shifted)
        } else {
            Cholesky::factor(&hessian)
        };

        let me = program.num_eq();
        let mc = me + kept.len();
        let mut out = Self { program, weights: weights.to_vec(), kept, hessian, chol, hinv_ct: Vec::new(), schur: None };
        out.hinv_ct = (0..mc)
            .map(|k| {
                let mut col = vec![0.0; n];
                out.constraint_row_add(k, 1.0, &mut col);
                out.chol.solve(&col)
            })
            .collect();
        out.schur = (mc > 0).then(|| {
            let mut s = SymMatrix::zeros(mc);
            let mut max_diag: f64 = 0.0;
            for i in 0..mc {
                for j in 0..=i {
                    let v = out.constraint_row_dot(i, &out.hinv_ct[j]);
                    s.add(i, j, v);
                }
                max_diag = max_diag.max(s.diag(i));
            }
            for i in 0..mc {
                s.add(i, i, out.delta(i));
            }
            // dependent equality rows would make the Schur complement singular
            let reg = 1e-13 * max_diag.max(1e-300);
            for i in 0..mc {
                s.add(i, i, reg);
            }
            Cholesky::factor(&s)
        });
        out
    }

    /// `D⁻¹` entry of constraint row `k` (zero for equality rows).
    fn delta(&self, k: usize) -> f64 {
        let me = self.program.num_eq();
        if k < me {
            0.0
        } else {
            1.0 / self.weights[self.kept[k - me]]
        }
    }

    fn constraint_row_dot(&self, k: usize, x: &[f64]) -> f64 {
        let me = self.program.num_eq();
        if k < me {
            self.program.eq_matrix.row_dot(k, x)
        } else {
            self.program.ineq_matrix.row_dot(self.kept[k - me], x)
        }
    }

    fn constraint_row_add(&self, k: usize, scale: f64, acc: &mut [f64]) {
        let me = self.program.num_eq();
        let row: &mut dyn Iterator<Item = (usize, f64)> = if k < me {
            &mut self.program.eq_matrix.row(k)
        } else {
            &mut self.program.ineq_matrix.row(self.kept[k - me])
        };
        for (c, v) in row {
            acc[c] += scale * v;
        }
    }

    fn approx_solve(&self, rx: &[f64], rc: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u = self.chol.solve(rx);
        let Some(schur) = &self.schur else {
            return (u, Vec::new());
        };
        let t: Vec<f64> = (0..rc.len()).map(|k| self.constraint_row_dot(k, &u) - rc[k]).collect();
        let dc = schur.solve(&t);
        let mut dx = u;
        for (k, ck) in dc.iter().enumerate() {
            for (x, h) in dx.iter_mut().zip(&self.hinv_ct[k]) {
                *x -= ck * h;
            }
        }
        (dx, dc)
    }

    fn residual(&self, rx: &[f64], rc: &[f64], dx: &[f64], dc: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut res_x: Vec<f64> = self.hessian.mul_vec(dx).iter().zip(rx).map(|(h, r)| r - h).collect();
        for (k, ck) in dc.iter().enumerate() {
            self.constraint_row_add(k, -ck, &mut res_x);
        }
        let res_c: Vec<f64> =
            (0..rc.len()).map(|k| rc[k] - self.constraint_row_dot(k, dx) + self.delta(k) * dc[k]).collect();
        (res_x, res_c)
    }

    /// Solves `[H, Cᵀ; C, -Δ] [dx; dc] = [rx; rc]` with iterative refinement.
    fn solve_constrained(&self, rx: &[f64], rc: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut dx, mut dc) = self.approx_solve(rx, rc);
        let scale = 1.0 + norm_inf(rx).max(norm_inf(rc));
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let (res_x, res_c) = self.residual(rx, rc, &dx, &dc);
            let r = norm_inf(&res_x).max(norm_inf(&res_c));
            if r <= 1e-15 * scale || r >= last {
                break;
            }
            last = r;
            let (ex, ec) = self.approx_solve(&res_x, &res_c);
            for (a, b) in dx.iter_mut().zip(&ex) {
                *a += b;
            }
            for (a, b) in dc.iter_mut().zip(&ec) {
                *a += b;
            }
        }
        (dx, dc)
    }

    /// Solves `[H, Eᵀ; E, 0] [dx; dy] = [rx; ry]`. Only valid without kept rows.
    pub fn solve(&self, rx: &[f64], ry: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert!(self.kept.is_empty());
        self.solve_constrained(rx, ry)
    }

    /// Solves the full system including the inequality block:
    /// `G dx - D⁻¹ dz = rz`, i.e. `dz = D (G dx - rz)` for reduced rows.
    pub fn solve_full(&self, rx: &[f64], ry: &[f64], rz: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = &self.program.ineq_matrix;
        let mut weighted: Vec<f64> = rz.iter().zip(&self.weights).map(|(r, w)| r * w).collect();
        for &r in &self.kept {
            weighted[r] = 0.0;
        }
        let gt = g.tr_mul_vec(&weighted);
        let rhs: Vec<f64> = rx.iter().zip(&gt).map(|(a, b)| a + b).collect();
        let mut rc = ry.to_vec();
        rc.extend(self.kept.iter().map(|&r| rz[r]));
        let (dx, dc) = self.solve_constrained(&rhs, &rc);
        let me = ry.len();
        let gdx = g.mul_vec(&dx);
        let mut dz: Vec<f64> = (0..rz.len()).map(|i| self.weights[i] * (gdx[i] - rz[i])).collect();
        for (k, &r) in self.kept.iter().enumerate() {
            dz[r] = dc[me + k];
        }
        (dx, dc[..me].to_vec(), dz)
    }
}
