//! Dense symmetric factorization used by the interior-point solver and the
//! PTDF construction.

use alloc::vec;
use alloc::vec::Vec;

/// Square symmetric matrix; only the lower triangle (`col <= row`) is stored
/// meaningfully.
#[derive(Debug, Clone)]
pub(crate) struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds to entry `(r, c)` with `c <= r`.
    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(c <= r);
        self.data[r * self.n + c] += v;
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[i * self.n + i]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for r in 0..n {
            let row = &self.data[r * n..r * n + r];
            let mut acc = self.data[r * n + r] * x[r];
            for (c, a) in row.iter().enumerate() {
                acc += a * x[c];
                out[c] += a * x[r];
            }
            out[r] += acc;
        }
        out
    }
}

/// Lower Cholesky factor `L Lᵀ ≈ M`.
///
/// Pivots that collapse below `PIVOT_DROP * diag` are clamped to that floor,
/// a local regularization of nearly dependent columns; an all-zero column gets
/// a huge pivot, which zeroes its solution component. Callers recover
/// accuracy with iterative refinement.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
    dropped: usize,
}

const PIVOT_DROP: f64 = 1e-14;
const HUGE_PIVOT: f64 = 1e64;

impl Cholesky {
    pub fn factor(m: &SymMatrix) -> Self {
        let n = m.n;
        let mut l = m.data.clone();
        let mut dropped = 0;
        for j in 0..n {
            let (head, tail) = l.split_at_mut(j * n);
            let row_j = &mut tail[..n];
            // row j of L: entries k < j already hold a_jk; finish them
            for k in 0..j {
                let row_k = &head[k * n..k * n + k];
                let s: f64 = row_j[..k].iter().zip(row_k).map(|(a, b)| a * b).sum();
                row_j[k] = (row_j[k] - s) / head[k * n + k];
            }
            let orig = row_j[j];
            let s: f64 = row_j[..j].iter().map(|a| a * a).sum();
            let d = orig - s;
            if !(d > PIVOT_DROP * crate::math::abs(orig)) || d < f64::MIN_POSITIVE {
                let floor = PIVOT_DROP * crate::math::abs(orig);
                row_j[j] = if floor > 0.0 { crate::math::sqrt(floor) } else { HUGE_PIVOT };
                dropped += 1;
            } else {
                row_j[j] = crate::math::sqrt(d);
            }
        }
        Self { n, l, dropped }
    }

    /// Number of pivots that were dropped as numerically singular.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let yi = y[i] / self.l[i * n + i];
            y[i] = yi;
            for k in 0..i {
                y[k] -= self.l[i * n + k] * yi;
            }
        }
        y
    }
}
