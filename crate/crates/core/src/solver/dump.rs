//! Plain-text dump of a program for inspection and external cross-checks.

use alloc::string::String;
use core::fmt::Write;

use crate::sparse::SparseMatrix;

use super::StandardFormProgram;

/// Writes every block in Matrix Market coordinate layout, each preceded by a
/// `% block <name>` line. Vectors are written as one-column matrices.
pub fn dump_program(program: &StandardFormProgram) -> String {
    let mut out = String::new();
    matrix(&mut out, "P", &program.quadratic_term);
    vector(&mut out, "q", &program.linear_cost);
    matrix(&mut out, "A", &program.eq_matrix);
    vector(&mut out, "b", &program.eq_rhs);
    matrix(&mut out, "G", &program.ineq_matrix);
    vector(&mut out, "h", &program.ineq_rhs);
    if let Some(names) = &program.variable_names {
        let _ = writeln!(out, "% block names");
        for (i, n) in names.iter().enumerate() {
            let _ = writeln!(out, "{} {}", i + 1, n);
        }
    }
    out
}

fn matrix(out: &mut String, name: &str, m: &SparseMatrix) {
    let _ = writeln!(out, "% block {name}");
    let _ = writeln!(out, "%%MatrixMarket matrix coordinate real general");
    let _ = writeln!(out, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
    for (r, c, v) in m.triplets() {
        let _ = writeln!(out, "{} {} {:e}", r + 1, c + 1, v);
    }
}

fn vector(out: &mut String, name: &str, v: &[f64]) {
    let _ = writeln!(out, "% block {name}");
    let _ = writeln!(out, "%%MatrixMarket matrix array real general");
    let _ = writeln!(out, "{} 1", v.len());
    for x in v {
        let _ = writeln!(out, "{x:e}");
    }
}
