//! Compressed sparse row storage for constraint matrices.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// CSR matrix. Duplicate entries given to the builder are summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    /// Builds from `(row, col, value)` triplets. Explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> =
            triplets.iter().copied().filter(|t| t.2 != 0.0).collect();
        for &(r, c, _) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn from_dense(rows: &[Vec<f64>], ncols: usize) -> Self {
        let mut t = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols);
            for (c, v) in row.iter().enumerate() {
                t.push((r, c, *v));
            }
        }
        Self::from_triplets(rows.len(), ncols, &t)
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// All stored entries as triplets, row-major.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|(cc, _)| *cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        self.row(r).map(|(c, v)| v * x[c]).sum()
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "sparse matvec dimension mismatch");
        (0..self.nrows).map(|r| self.row_dot(r, x)).collect()
    }

    /// `selfᵀ * y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows, "sparse transposed matvec dimension mismatch");
        let mut out = vec![0.0; self.ncols];
        for (r, yr) in y.iter().enumerate() {
            if *yr != 0.0 {
                for (c, v) in self.row(r) {
                    out[c] += v * yr;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn max_abs(&self) -> f64 {
        crate::math::norm_inf(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        crate::math::all_finite(&self.values)
    }

    pub fn to_dense(&self) -> crate::Matrix {
        let mut m = crate::Matrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    /// Largest `|a_ij - a_ji|`; the matrix must be square.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let mut worst: f64 = 0.0;
        for (r, c, v) in self.triplets() {
            worst = worst.max(crate::math::abs(v - self.get(c, r)));
        }
        worst
    }

    /// Appends the rows of `other` below `self`.
    pub fn vstack(&self, other: &SparseMatrix) -> Self {
        assert_eq!(self.ncols, other.ncols);
        let mut t: Vec<_> = self.triplets().collect();
        t.extend(other.triplets().map(|(r, c, v)| (r + self.nrows, c, v)));
        Self::from_triplets(self.nrows + other.nrows, self.ncols, &t)
    }

    /// Adds `weight * row_r ⊗ row_r` into the dense accumulator.
    pub(crate) fn add_weighted_row_outer(&self, r: usize, weight: f64, acc: &mut crate::dense::SymMatrix) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        let cols = &self.col_idx[span.clone()];
        let vals = &self.values[span];
        for (a, va) in cols.iter().zip(vals) {
            let wa = weight * va;
            for (b, vb) in cols.iter().zip(vals) {
                if b <= a {
                    acc.add(*a, *b, wa * vb);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_summed_and_zeros_dropped() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 2, 0.0), (1, 0, -1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, -1.0]);
        assert_eq!(m.tr_mul_vec(&[1.0, 2.0]), vec![-2.0, 3.0, 0.0]);
        assert_eq!(m.transpose().get(1, 0), 3.0);
    }

    #[test]
    fn vstack_offsets_rows() {
        let a = SparseMatrix::identity(2);
        let s = a.vstack(&a);
        assert_eq!(s.nrows(), 4);
        assert_eq!(s.get(3, 1), 1.0);
    }
}
