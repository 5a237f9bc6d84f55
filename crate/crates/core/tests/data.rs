use drcal_core::data::{forecast, DataError};
use drcal_core::{
    empirical_errors, gen_synthetic_dataset, wasserstein_1d, Dataset, DatasetRole, Matrix,
    SyntheticSpec, UqError,
};
use proptest::prelude::*;

fn theta0() -> Matrix {
    Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap()
}

fn spec(sigma: f64, seed: u64, role: DatasetRole) -> SyntheticSpec {
    SyntheticSpec::new(theta0(), 20, sigma, seed, role, vec![200.0])
}

#[test]
fn zero_noise_reproduces_the_model() {
    let data = gen_synthetic_dataset(&spec(0.0, 3, DatasetRole::Uq)).unwrap();
    for i in 0..data.len() {
        let x = data.features.row(i);
        assert!(x.iter().all(|v| (20.0..=50.0).contains(v)));
        assert_eq!(data.actuals[(i, 0)], x[0] + 2.0 * x[1]);
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let a = gen_synthetic_dataset(&spec(10.0, 7, DatasetRole::Uq)).unwrap();
    let b = gen_synthetic_dataset(&spec(10.0, 7, DatasetRole::Uq)).unwrap();
    assert_eq!(a, b);
    let c = gen_synthetic_dataset(&spec(10.0, 8, DatasetRole::Uq)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn actuals_are_clipped_to_capacity() {
    let mut s = spec(500.0, 1, DatasetRole::Calibration);
    s.n = 200;
    let data = gen_synthetic_dataset(&s).unwrap();
    data.check_capacity(&[200.0]).unwrap();
    let hits = (0..data.len()).filter(|i| data.actuals[(*i, 0)] == 0.0 || data.actuals[(*i, 0)] == 200.0);
    assert!(hits.count() > 10);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(gen_synthetic_dataset(&spec(-1.0, 1, DatasetRole::Uq)).is_err());
    let mut s = spec(1.0, 1, DatasetRole::Uq);
    s.n = 0;
    assert!(gen_synthetic_dataset(&s).is_err());
    assert!(matches!(
        Dataset::new(Matrix::zeros(2, 1), Matrix::zeros(3, 1), DatasetRole::Uq),
        Err(DataError::SampleCountMismatch { .. })
    ));
}

#[test]
fn default_uq_errors_stay_in_support() {
    let data = gen_synthetic_dataset(&spec(10.0, 11, DatasetRole::Uq)).unwrap();
    let model = empirical_errors(&theta0(), &data, vec![-50.0], vec![50.0], 0.05).unwrap();
    assert_eq!(model.errors.shape(), (1, 20));
    assert!(model.epsilon.is_none());
    model.validate().unwrap();
}

#[test]
fn single_sample_error_is_a_difference() {
    let features = Matrix::from_rows(&[vec![7.0]]).unwrap();
    let actuals = Matrix::from_rows(&[vec![10.0]]).unwrap();
    let data = Dataset::new(features, actuals, DatasetRole::Uq).unwrap();
    let theta = Matrix::from_rows(&[vec![1.0]]).unwrap();
    let model = empirical_errors(&theta, &data, vec![-50.0], vec![50.0], 0.05).unwrap();
    assert_eq!(model.errors[(0, 0)], 3.0);
}

#[test]
fn perfect_model_and_clamping() {
    let data = gen_synthetic_dataset(&spec(0.0, 5, DatasetRole::Uq)).unwrap();
    let model = empirical_errors(&theta0(), &data, vec![-50.0], vec![50.0], 0.05).unwrap();
    assert!(model.errors.as_slice().iter().all(|e| *e == 0.0));

    let shifted = Matrix::from_rows(&[vec![1.5], vec![2.0]]).unwrap();
    let model = empirical_errors(&shifted, &data, vec![-5.0], vec![5.0], 0.05).unwrap();
    assert!(model.errors.as_slice().iter().all(|e| *e == -5.0));
}

#[test]
fn uq_errors_reject_bad_input() {
    let data = gen_synthetic_dataset(&spec(1.0, 5, DatasetRole::Calibration)).unwrap();
    assert_eq!(
        empirical_errors(&theta0(), &data, vec![-50.0], vec![50.0], 0.05),
        Err(UqError::WrongRole)
    );
    let data = gen_synthetic_dataset(&spec(1.0, 5, DatasetRole::Uq)).unwrap();
    let wrong = Matrix::from_rows(&[vec![1.0]]).unwrap();
    assert!(empirical_errors(&wrong, &data, vec![-50.0], vec![50.0], 0.05).is_err());
    assert!(empirical_errors(&theta0(), &data, vec![-50.0], vec![50.0], 1.5).is_err());
}

#[test]
fn wasserstein_examples() {
    assert_eq!(wasserstein_1d(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(wasserstein_1d(&[0.0], &[-4.5]).unwrap(), 4.5);
    assert_eq!(wasserstein_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
    assert_eq!(wasserstein_1d(&[], &[]), Err(UqError::EmptyInput));
    assert!(wasserstein_1d(&[1.0], &[1.0, 2.0]).is_err());
}

/// Minimum-cost matching over all permutations.
fn brute_force_w1(a: &[f64], b: &[f64]) -> f64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }
    perms(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, j)| (a[i] - b[*j]).abs()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        / a.len() as f64
}

fn samples(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_is_a_metric(
        (a, b, c) in (1usize..6).prop_flat_map(|n| (samples(n), samples(n), samples(n)))
    ) {
        let ab = wasserstein_1d(&a, &b).unwrap();
        let ba = wasserstein_1d(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        let ac = wasserstein_1d(&a, &c).unwrap();
        let bc = wasserstein_1d(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!((ab - brute_force_w1(&a, &b)).abs() < 1e-9);
        if ab == 0.0 {
            let mut sa = a.clone();
            let mut sb = b.clone();
            sa.sort_by(f64::total_cmp);
            sb.sort_by(f64::total_cmp);
            prop_assert_eq!(sa, sb);
        }
    }

    #[test]
    fn errors_shift_with_actuals(seed in 0u64..1000, shift in -5.0..5.0f64) {
        let data = gen_synthetic_dataset(&spec(3.0, seed, DatasetRole::Uq)).unwrap();
        let mut moved = data.clone();
        moved.actuals.as_mut_slice().iter_mut().for_each(|y| *y += shift);
        let a = empirical_errors(&theta0(), &data, vec![-50.0], vec![50.0], 0.05).unwrap();
        let b = empirical_errors(&theta0(), &moved, vec![-50.0], vec![50.0], 0.05).unwrap();
        for (x, y) in a.errors.as_slice().iter().zip(b.errors.as_slice()) {
            prop_assert!((y - x - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn forecast_is_linear(x0 in 0.0..100.0f64, x1 in 0.0..100.0f64) {
        let y = forecast(&theta0(), &[x0, x1]);
        prop_assert_eq!(y, vec![x0 + 2.0 * x1]);
    }
}
