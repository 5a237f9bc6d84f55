#![allow(dead_code)]

use drcal_core::{
    empirical_errors, gen_synthetic_dataset, DatasetRole, EmpiricalErrorModel, Matrix,
    NetworkCase, SyntheticSpec,
};

pub fn theta0() -> Matrix {
    Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap()
}

/// Default error model on the bundled case: `n` samples, σ = 10 MW.
pub fn uq_model(n: usize, seed: u64, eps: f64) -> EmpiricalErrorModel {
    let data = gen_synthetic_dataset(&SyntheticSpec::new(
        theta0(),
        n,
        10.0,
        seed,
        DatasetRole::Uq,
        vec![200.0],
    ))
    .unwrap();
    empirical_errors(&theta0(), &data, vec![-50.0], vec![50.0], 0.05)
        .unwrap()
        .with_epsilon(vec![eps])
}

pub fn case5() -> NetworkCase {
    NetworkCase::five_bus()
}

/// Small deterministic generator for test inputs.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
