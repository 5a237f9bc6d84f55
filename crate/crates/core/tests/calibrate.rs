mod common;

use common::{case5, theta0, Lcg};
use drcal_core::{
    calibrate, gen_synthetic_dataset, eps_step, mse_grad, mse_loss, schedule_jacobians, solve_dispatch, task_losses,
    theta_column_step, total_grads, CalibrationConfig, CalibrationError, CalibrationState, Dataset, DatasetRole, EmpiricalErrorModel,
    Matrix, NetworkCase, Sequential, SyntheticSpec,
};
use proptest::prelude::*;

fn data(n: usize, sigma: f64, seed: u64, role: DatasetRole) -> Dataset {
    gen_synthetic_dataset(&SyntheticSpec::new(theta0(), n, sigma, seed, role, vec![200.0])).unwrap()
}

fn single(x: Vec<f64>, y: Vec<f64>) -> Dataset {
    Dataset::new(Matrix::from_rows(&[x]).unwrap(), Matrix::from_rows(&[y]).unwrap(), DatasetRole::Calibration)
        .unwrap()
}

#[test]
fn mse_examples() {
    let d = data(10, 0.0, 3, DatasetRole::Calibration);
    assert_eq!(mse_loss(&theta0(), &d).unwrap(), 0.0);
    assert!(mse_grad(&theta0(), &d).unwrap().as_slice().iter().all(|v| *v == 0.0));

    let one = single(vec![1.0, 1.0], vec![5.0]);
    let theta = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
    assert_eq!(mse_loss(&theta, &one).unwrap(), 4.0);

    let scalar = single(vec![2.0], vec![0.0]);
    let g = mse_grad(&Matrix::from_rows(&[vec![1.0]]).unwrap(), &scalar).unwrap();
    assert_eq!(g.as_slice(), &[8.0]);

    let empty = Dataset::new(Matrix::zeros(0, 2), Matrix::zeros(0, 1), DatasetRole::Calibration).unwrap();
    assert_eq!(mse_loss(&theta0(), &empty), Err(CalibrationError::EmptyDataset));
}

#[test]
fn mse_at_truth_is_near_noise_variance() {
    let d = data(20, 20.0, 7, DatasetRole::Calibration);
    let mse = mse_loss(&theta0(), &d).unwrap();
    assert!((200.0..=600.0).contains(&mse), "{mse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mse_grad_matches_finite_differences(
        seed in 0u64..1000,
        t0 in 0.5f64..1.5,
        t1 in 1.5f64..2.5,
    ) {
        let d = data(8, 15.0, seed, DatasetRole::Calibration);
        let theta = Matrix::from_rows(&[vec![t0], vec![t1]]).unwrap();
        let g = mse_grad(&theta, &d).unwrap();
        for r in 0..2 {
            let h = 1e-5;
            let mut up = theta.clone();
            up[(r, 0)] += h;
            let mut dn = theta.clone();
            dn[(r, 0)] -= h;
            let fd = (mse_loss(&up, &d).unwrap() - mse_loss(&dn, &d).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[(r, 0)]).abs() <= 1e-6 * fd.abs().max(1.0), "{} vs {}", fd, g[(r, 0)]);
        }
    }
}

fn config() -> CalibrationConfig {
    CalibrationConfig { max_iters: 30, ..Default::default() }
}

fn model(cfg: &CalibrationConfig, n: usize, seed: u64) -> EmpiricalErrorModel {
    cfg.error_model(&theta0(), &data(n, 10.0, seed, DatasetRole::Uq)).unwrap()
}

#[test]
fn task_losses_bookkeeping() {
    let case = case5();
    let cfg = config();
    let uq = model(&cfg, 20, 1).with_epsilon(vec![1.0]);
    let cal = data(5, 20.0, 2, DatasetRole::Calibration);
    let f = drcal_core::forecasts(&theta0(), &cal.features);
    let mut scheds = Vec::new();
    let mut disps = Vec::new();
    for i in 0..cal.len() {
        let (s, _) = schedule_jacobians(&case, f.row(i), &uq, &cfg.layer).unwrap();
        disps.push(solve_dispatch(&case, &s, cal.actuals.row(i), &cfg.dispatch_options()).unwrap());
        scheds.push(s);
    }
    let (t1, t2) = task_losses(&case, &scheds, &disps).unwrap();
    let mean_stage1 = scheds.iter().map(|s| s.objective_stage1).sum::<f64>() / 5.0;
    assert!((t1 - mean_stage1).abs() <= 1e-9 * mean_stage1.abs().max(1.0));
    // by hand for one sample
    let s = &scheds[0];
    let hand: f64 = (0..3).map(|k| case.cost_energy[k] * s.g[k] + case.cost_reserve[k] * (s.r_plus[k] + s.r_minus[k])).sum();
    let (one, _) = task_losses(&case, &scheds[..1], &disps[..1]).unwrap();
    assert!((one - hand).abs() < 1e-9 * hand);

    let state = CalibrationState::new(theta0(), vec![1.0]);
    let (_, _, loss) = total_grads(&state, &case, &model(&cfg, 20, 1), &cal, &cfg, &Sequential).unwrap();
    assert!((loss.task1 - t1).abs() < 1e-9 * t1 && (loss.task2 - t2).abs() < 1e-9 * t2.max(1.0));
    assert_eq!(loss.total, loss.task1 + loss.task2 + cfg.eta * loss.mse);
    assert!(task_losses(&case, &scheds, &disps[..2]).is_err());
}

/// Wide-open network with one cheap unit: no binding limit in either stage.
fn roomy_case() -> NetworkCase {
    let mut desc = case5().to_description();
    for l in &mut desc.lines {
        l.limit_mw = 1e4;
    }
    for g in &mut desc.generators {
        g.pmin_mw = 0.0;
        g.pmax_mw = 1000.0;
    }
    NetworkCase::from_description(&desc).unwrap()
}

#[test]
fn deterministic_world_has_no_task2_and_no_radius_value() {
    let case = roomy_case();
    let cfg = config();
    let uq = EmpiricalErrorModel::from_errors(Matrix::zeros(1, 10), vec![-50.0], vec![50.0], 0.05).unwrap();
    let cal = data(4, 0.0, 5, DatasetRole::Calibration);
    // at this radius the reserves already cover the whole support, so the
    // chance constraint is slack and the radius has no marginal value
    let eps = 3.0;
    let state = CalibrationState::new(theta0(), vec![eps]);
    let (_, d_eps, loss) = total_grads(&state, &case, &uq, &cal, &cfg, &Sequential).unwrap();
    assert!(loss.task2.abs() < 1e-6, "{loss:?}");
    assert!(d_eps[0].abs() < 1e-4, "{d_eps:?}");
    let fd = stable_fd(|e| loss_at(&case, &uq, &cal, &theta0(), &[e], &cfg), eps).unwrap();
    assert!(fd.abs() < 1e-3, "{fd}");
}

#[test]
fn huge_eta_points_along_mse_gradient() {
    let case = case5();
    let cfg = CalibrationConfig { eta: 1e9, ..config() };
    let cal = data(6, 20.0, 11, DatasetRole::Calibration);
    let theta = Matrix::from_rows(&[vec![0.9], vec![2.1]]).unwrap();
    let state = CalibrationState::new(theta.clone(), vec![0.5]);
    let (d, _, _) = total_grads(&state, &case, &model(&cfg, 20, 1), &cal, &cfg, &Sequential).unwrap();
    let m = mse_grad(&theta, &cal).unwrap();
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<_>>()
    };
    for (a, b) in unit(d.as_slice()).iter().zip(unit(m.as_slice())) {
        assert!((a - b).abs() < 1e-6, "{d:?} vs {m:?}");
    }
}

fn loss_at(case: &NetworkCase, uq: &EmpiricalErrorModel, cal: &Dataset, theta: &Matrix, eps: &[f64], cfg: &CalibrationConfig) -> Option<f64> {
    let state = CalibrationState::new(theta.clone(), eps.to_vec());
    total_grads(&state, case, uq, cal, cfg, &Sequential).ok().map(|r| r.2.total)
}

/// Central difference of the loss along one coordinate, or `None` when two
/// step sizes disagree (a kink inside the step).
fn stable_fd(f: impl Fn(f64) -> Option<f64>, x: f64) -> Option<f64> {
    let d = |h: f64| Some((f(x + h)? - f(x - h)?) / (2.0 * h));
    let h = 1e-4 * x.abs().max(1.0);
    let (a, b) = (d(h)?, d(2.0 * h)?);
    ((a - b).abs() <= 1e-4 * a.abs().max(1.0)).then_some(a)
}

#[test]
fn total_grads_match_end_to_end_differences() {
    let case = case5();
    let mut cfg = config();
    cfg.layer.solver.tol = 1e-11;
    let mut rng = Lcg(77);
    let (mut stable, mut total) = (0, 0);
    for inst in 0..8u64 {
        let uq = model(&cfg, 12, 100 + inst);
        let cal = data(3, rng.uniform(10.0, 25.0), 200 + inst, DatasetRole::Calibration);
        let theta = Matrix::from_rows(&[vec![rng.uniform(0.8, 1.2)], vec![rng.uniform(1.8, 2.2)]]).unwrap();
        let eps = rng.uniform(0.1, 1.4);
        let state = CalibrationState::new(theta.clone(), vec![eps]);
        let (d_theta, d_eps, _) = total_grads(&state, &case, &uq, &cal, &cfg, &Sequential).unwrap();
        total += 1;
        let fe = stable_fd(|e| loss_at(&case, &uq, &cal, &theta, &[e], &cfg), eps);
        let ft: Vec<Option<f64>> = (0..2)
            .map(|r| {
                stable_fd(
                    |t| {
                        let mut th = theta.clone();
                        th[(r, 0)] = t;
                        loss_at(&case, &uq, &cal, &th, &[eps], &cfg)
                    },
                    theta[(r, 0)],
                )
            })
            .collect();
        let (Some(fe), Some(f0), Some(f1)) = (fe, ft[0], ft[1]) else { continue };
        stable += 1;
        for (a, b) in [(d_eps[0], fe), (d_theta[(0, 0)], f0), (d_theta[(1, 0)], f1)] {
            assert!((a - b).abs() <= 2e-3 * b.abs().max(1.0), "instance {inst}: {a} vs {b}");
        }
    }
    assert!(stable * 2 >= total, "{stable}/{total}");
}

#[test]
fn zero_rates_freeze_parameters_and_converge() {
    let case = case5();
    let cfg = CalibrationConfig { lr_theta: 0.0, lr_eps: 0.0, ..config() };
    let uq = data(10, 10.0, 1, DatasetRole::Uq);
    let cal = data(4, 20.0, 2, DatasetRole::Calibration);
    let st = calibrate(&case, &uq, &cal, &theta0(), &[1.0], &cfg, &Sequential).unwrap();
    assert!(st.converged);
    assert_eq!(st.iter, 2);
    assert_eq!(st.loss_history.len(), 2);
    assert_eq!(st.theta, theta0());
    assert_eq!(st.epsilon, vec![1.0]);
    assert_eq!(st.loss_history[0], st.loss_history[1]);
}

#[test]
fn run_bookkeeping_and_projection() {
    let case = case5();
    let cfg = CalibrationConfig { max_iters: 4, lr_eps: 1.0, eps_floor: 0.05, stop_delta: Some(1e-12), ..config() };
    let uq = data(10, 10.0, 3, DatasetRole::Uq);
    let cal = data(4, 25.0, 4, DatasetRole::Calibration);
    let st = calibrate(&case, &uq, &cal, &theta0(), &[0.3], &cfg, &Sequential).unwrap();
    assert_eq!(st.iter, 4);
    assert_eq!(st.loss_history.len(), st.iter);
    assert!(!st.converged);
    for rec in &st.trajectory {
        assert!(rec.epsilon[0] >= cfg.eps_floor);
        assert_eq!(rec.loss.total, rec.loss.task1 + rec.loss.task2 + cfg.eta * rec.loss.mse);
    }
    assert!(st.epsilon[0] >= cfg.eps_floor);

    let none = CalibrationConfig { max_iters: 0, ..config() };
    let st = calibrate(&case, &uq, &cal, &theta0(), &[0.3], &none, &Sequential).unwrap();
    assert_eq!((st.iter, st.theta.clone(), st.converged), (0, theta0(), false));

    assert!(matches!(
        calibrate(&case, &uq, &cal, &theta0(), &[0.01], &cfg, &Sequential),
        Err(CalibrationError::InvalidConfig(_))
    ));
    let bad = CalibrationConfig { stop_delta: Some(0.0), ..config() };
    assert!(bad.validate().is_err());
}

#[test]
fn first_step_does_not_increase_loss() {
    let case = case5();
    let uq = data(12, 10.0, 9, DatasetRole::Uq);
    let cal = data(4, 20.0, 10, DatasetRole::Calibration);
    let mut cfg = CalibrationConfig { max_iters: 2, stop_delta: Some(1e-12), ..config() };
    for _ in 0..=3 {
        let st = calibrate(&case, &uq, &cal, &theta0(), &[0.6], &cfg, &Sequential).unwrap();
        if st.loss_history[1].total <= st.loss_history[0].total {
            return;
        }
        cfg.lr_theta /= 2.0;
        cfg.lr_eps /= 2.0;
    }
    panic!("loss increased at every step size");
}

#[test]
fn zero_gradient_steps_are_identity() {
    let theta = [0.7, -1.3];
    assert_eq!(theta_column_step(&theta, &[0.0, 0.0], 0.5), theta.to_vec());
    assert_eq!(eps_step(&[0.4], &[0.0], 0.5, 0.0), vec![0.4]);
    assert_eq!(eps_step(&[0.4], &[10.0], 0.5, 0.1), vec![0.1]);
}
