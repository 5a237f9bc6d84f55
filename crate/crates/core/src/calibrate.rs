//! Gradient-descent calibration of the forecast parameters `Θ` and the
//! ambiguity radii `ε` against the two-stage operating cost.
//!
//! The per-round market work (schedule, sensitivities, dispatch, envelope
//! partials) is split from the parameter updates so that the distributed
//! operator and agents run exactly the same arithmetic as [`calibrate`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::NetworkCase;
use crate::data::Dataset;
use crate::diff::{schedule_jacobians, DiffError, LayerConfig};
use crate::dispatch::{dispatch_value_partials, solve_dispatch, DispatchError, DispatchOptions};
use crate::matrix::Matrix;
use crate::schedule::stage1_cost;
use crate::uq::{empirical_errors, EmpiricalErrorModel, UqError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("schedule: {0}")]
    Schedule(#[from] DiffError),
    #[error("dispatch: {0}")]
    Dispatch(#[from] DispatchError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("invalid calibration config: {0}")]
    InvalidConfig(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("calibration sample {index}: {source}")]
    Sample { index: usize, source: SampleError },
    #[error("non-finite gradient at iteration {iter}")]
    NonFiniteGradient { iter: usize },
    #[error(transparent)]
    Uq(#[from] UqError),
}

impl CalibrationError {
    /// True when a market stage had no feasible point.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            CalibrationError::Sample {
                source: SampleError::Schedule(DiffError::InfeasibleSchedule | DiffError::InfeasiblePerturbation { .. })
                    | SampleError::Dispatch(DispatchError::InfeasibleDispatch { .. }),
                ..
            }
        )
    }

    /// True for solver breakdowns and non-finite values.
    pub fn is_numerical(&self) -> bool {
        match self {
            CalibrationError::NonFiniteGradient { .. } => true,
            CalibrationError::Sample { source, .. } => !self.is_infeasible() && !matches!(
                source,
                SampleError::Schedule(DiffError::InvalidConfig(_))
                    | SampleError::Dispatch(DispatchError::InvalidOption(_) | DispatchError::DimensionMismatch(_))
            ),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Weight of the MSE term.
    pub eta: f64,
    pub lr_theta: f64,
    pub lr_eps: f64,
    /// Absolute loss-change threshold; `None` means `1e-5 ×` the first loss.
    pub stop_delta: Option<f64>,
    pub max_iters: usize,
    pub eps_floor: f64,
    /// Half-width of the error support, `ξ̄ = −ξ̲`, MW.
    pub support_mw: f64,
    /// Chance-constraint level `γ`.
    pub risk_level: f64,
    /// Price of load shedding in the dispatch; `None` aborts on an uncoverable imbalance.
    pub load_shed_cost: Option<f64>,
    pub layer: LayerConfig,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lr_theta: 1e-4,
            lr_eps: 1e-3,
            stop_delta: None,
            max_iters: 200,
            eps_floor: 0.0,
            support_mw: 50.0,
            risk_level: 0.05,
            load_shed_cost: None,
            layer: LayerConfig::default(),
            seed: 1,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let rate = |v: f64| v == 0.0 || pos(v);
        if !rate(self.lr_theta) || !rate(self.lr_eps) {
            return Err(CalibrationError::InvalidConfig("learning rates must be finite and >= 0"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(CalibrationError::InvalidConfig("eta must be finite and >= 0"));
        }
        if let Some(d) = self.stop_delta {
            if !pos(d) {
                return Err(CalibrationError::InvalidConfig("stop_delta must be > 0"));
            }
        }
        if !(self.eps_floor >= 0.0 && self.eps_floor.is_finite()) {
            return Err(CalibrationError::InvalidConfig("eps_floor must be >= 0"));
        }
        if !pos(self.support_mw) {
            return Err(CalibrationError::InvalidConfig("support must be > 0"));
        }
        if !(self.risk_level > 0.0 && self.risk_level < 1.0) {
            return Err(CalibrationError::InvalidConfig("risk level must lie in (0, 1)"));
        }
        self.layer.validate().map_err(|_| CalibrationError::InvalidConfig("layer config"))
    }

    pub fn dispatch_options(&self) -> DispatchOptions {
        DispatchOptions { solver: self.layer.solver, load_shed_cost: self.load_shed_cost }
    }

    /// Builds the frozen error model from `Θ0` and the UQ data.
    pub fn error_model(&self, theta0: &Matrix, uq_data: &Dataset) -> Result<EmpiricalErrorModel, UqError> {
        let nw = uq_data.n_wind();
        empirical_errors(theta0, uq_data, vec![-self.support_mw; nw], vec![self.support_mw; nw], self.risk_level)
    }
}

/// Loss of one iteration, money units except `mse` in MW².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub task1: f64,
    pub task2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(mse: f64, task1: f64, task2: f64, eta: f64) -> Self {
        Self { mse, task1, task2, total: task1 + task2 + eta * mse }
    }
}

/// Parameters and loss of one recorded iteration; the loss is the one
/// evaluated at these parameters, before the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub theta: Matrix,
    pub epsilon: Vec<f64>,
    pub loss: LossBreakdown,
    pub d_loss_d_eps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    /// features × farms
    pub theta: Matrix,
    pub epsilon: Vec<f64>,
    pub iter: usize,
    pub loss_history: Vec<LossBreakdown>,
    pub converged: bool,
    pub trajectory: Vec<IterationRecord>,
}

/// Market-side result of one round over all calibration samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketRound {
    /// samples × farms, `(C + ∂L₂/∂G)ᵀ ∂G/∂ŷ_j` per sample, not averaged.
    pub d_loss_d_yhat: Matrix,
    /// Sample mean of `(C + ∂L₂/∂G)ᵀ ∂G/∂ε_j`.
    pub d_loss_d_eps: Vec<f64>,
    pub task1: f64,
    pub task2: f64,
}

/// Runs the per-sample closure for every index. Implementations may run in
/// parallel but must return results in index order.
pub trait SampleMap {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R>;
}

/// In-order, single-threaded [`SampleMap`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl SampleMap for Sequential {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R> {
        (0..n).map(f).collect()
    }
}

/// `θ_jᵀx`, summed in feature order.
pub fn forecast_one(theta_j: &[f64], x: &[f64]) -> f64 {
    theta_j.iter().zip(x).fold(0.0, |acc, (t, v)| acc + t * v)
}

/// samples × farms matrix of unclipped forecasts `Θᵀxᵢ`.
pub fn forecasts(theta: &Matrix, features: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(features.rows(), theta.cols());
    for j in 0..theta.cols() {
        let col = theta.col(j);
        for i in 0..features.rows() {
            out[(i, j)] = forecast_one(&col, features.row(i));
        }
    }
    out
}

/// `(1/N) Σᵢ ‖yᵢ − ŷᵢ‖²` from precomputed forecasts.
pub fn mse_from_forecasts(forecasts: &Matrix, actuals: &Matrix) -> f64 {
    let n = forecasts.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..forecasts.cols() {
            let d = actuals[(i, j)] - forecasts[(i, j)];
            sum += d * d;
        }
    }
    sum / n as f64
}

fn check_dims(theta: &Matrix, data: &Dataset) -> Result<(), CalibrationError> {
    if data.is_empty() {
        return Err(CalibrationError::EmptyDataset);
    }
    if theta.rows() != data.n_features() {
        return Err(CalibrationError::DimensionMismatch("theta rows vs features"));
    }
    if theta.cols() != data.n_wind() {
        return Err(CalibrationError::DimensionMismatch("theta columns vs farms"));
    }
    Ok(())
}

pub fn mse_loss(theta: &Matrix, cal_data: &Dataset) -> Result<f64, CalibrationError> {
    check_dims(theta, cal_data)?;
    Ok(mse_from_forecasts(&forecasts(theta, &cal_data.features), &cal_data.actuals))
}

/// `(1/N) Σᵢ 2(θ_jᵀxᵢ − y_ji) xᵢ` for one farm.
pub fn mse_grad_column(features: &Matrix, forecast_col: &[f64], actual_col: &[f64]) -> Vec<f64> {
    let n = features.rows();
    let mut g = vec![0.0; features.cols()];
    for i in 0..n {
        let r = 2.0 * (forecast_col[i] - actual_col[i]);
        for (gf, x) in g.iter_mut().zip(features.row(i)) {
            *gf += r * x;
        }
    }
    g.iter_mut().for_each(|v| *v /= n as f64);
    g
}

pub fn mse_grad(theta: &Matrix, cal_data: &Dataset) -> Result<Matrix, CalibrationError> {
    check_dims(theta, cal_data)?;
    let f = forecasts(theta, &cal_data.features);
    let mut out = Matrix::zeros(theta.rows(), theta.cols());
    for j in 0..theta.cols() {
        out.set_col(j, &mse_grad_column(&cal_data.features, &f.col(j), &cal_data.actuals.col(j)));
    }
    Ok(out)
}

/// Full gradient of one `θ_j` column: `(1/N) Σᵢ sᵢxᵢ + η·mse_grad`, where
/// `sᵢ` is the per-sample market signal for that farm.
pub fn theta_column_grad(
    features: &Matrix,
    signal: &[f64],
    forecast_col: &[f64],
    actual_col: &[f64],
    eta: f64,
) -> Vec<f64> {
    let n = features.rows();
    let mut g = vec![0.0; features.cols()];
    for i in 0..n {
        for (gf, x) in g.iter_mut().zip(features.row(i)) {
            *gf += signal[i] * x;
        }
    }
    let m = mse_grad_column(features, forecast_col, actual_col);
    g.iter().zip(&m).map(|(t, m)| t / n as f64 + eta * m).collect()
}

/// `θ_j − κ_θ ∇θ_j`.
pub fn theta_column_step(theta_j: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
    theta_j.iter().zip(grad).map(|(t, g)| t - lr * g).collect()
}

/// `max(floor, ε − κ_ε ∇ε)`.
pub fn eps_step(eps: &[f64], grad: &[f64], lr: f64, floor: f64) -> Vec<f64> {
    eps.iter().zip(grad).map(|(e, g)| (e - lr * g).max(floor)).collect()
}

/// `task1` and `task2` from per-sample solutions: the mean stage-one
/// energy-and-reserve cost and the mean dispatch cost.
pub fn task_losses(
    case: &NetworkCase,
    schedules: &[crate::schedule::ScheduleSolution],
    dispatches: &[crate::dispatch::DispatchSolution],
) -> Result<(f64, f64), CalibrationError> {
    if schedules.len() != dispatches.len() {
        return Err(CalibrationError::DimensionMismatch("schedules vs dispatches"));
    }
    if schedules.is_empty() {
        return Err(CalibrationError::EmptyDataset);
    }
    let n = schedules.len() as f64;
    let t1 = schedules.iter().map(|s| stage1_cost(case, s)).sum::<f64>() / n;
    let t2 = dispatches.iter().map(|d| d.cost).sum::<f64>() / n;
    Ok((t1, t2))
}

struct SampleResult {
    d_yhat: Vec<f64>,
    d_eps: Vec<f64>,
    task1: f64,
    task2: f64,
}

fn sample_pass(
    case: &NetworkCase,
    uq: &EmpiricalErrorModel,
    forecast: &[f64],
    realized: &[f64],
    config: &CalibrationConfig,
) -> Result<SampleResult, SampleError> {
    let (sched, jac) = schedule_jacobians(case, forecast, uq, &config.layer)?;
    let disp = solve_dispatch(case, &sched, realized, &config.dispatch_options())?;
    let env = dispatch_value_partials(&disp, case).stacked();
    let ng = case.n_generators;
    // C = (c_g, c_r, c_r)
    let weight: Vec<f64> = (0..3 * ng)
        .map(|k| {
            let c = if k < ng { case.cost_energy[k] } else { case.cost_reserve[k % ng] };
            c + env[k]
        })
        .collect();
    let project = |m: &Matrix, j: usize| (0..m.rows()).map(|r| weight[r] * m[(r, j)]).sum::<f64>();
    Ok(SampleResult {
        d_yhat: (0..case.n_wind).map(|j| project(&jac.d_g_d_yhat, j)).collect(),
        d_eps: (0..case.n_wind).map(|j| project(&jac.d_g_d_eps, j)).collect(),
        task1: stage1_cost(case, &sched),
        task2: disp.cost,
    })
}

/// Clears both stages for every sample at the given forecasts and radii and
/// returns the market-side gradient signals.
pub fn market_round<M: SampleMap>(
    case: &NetworkCase,
    uq: &EmpiricalErrorModel,
    forecasts: &Matrix,
    actuals: &Matrix,
    config: &CalibrationConfig,
    exec: &M,
) -> Result<MarketRound, CalibrationError> {
    let n = forecasts.rows();
    if n == 0 {
        return Err(CalibrationError::EmptyDataset);
    }
    if forecasts.cols() != case.n_wind || actuals.shape() != forecasts.shape() {
        return Err(CalibrationError::DimensionMismatch("forecasts vs actuals vs farms"));
    }
    let results = exec.map(n, |i| sample_pass(case, uq, forecasts.row(i), actuals.row(i), config));
    let nw = case.n_wind;
    let mut round = MarketRound {
        d_loss_d_yhat: Matrix::zeros(n, nw),
        d_loss_d_eps: vec![0.0; nw],
        task1: 0.0,
        task2: 0.0,
    };
    for (index, r) in results.into_iter().enumerate() {
        let r = r.map_err(|source| CalibrationError::Sample { index, source })?;
        round.d_loss_d_yhat.row_mut(index).copy_from_slice(&r.d_yhat);
        for (acc, v) in round.d_loss_d_eps.iter_mut().zip(&r.d_eps) {
            *acc += v;
        }
        round.task1 += r.task1;
        round.task2 += r.task2;
    }
    round.d_loss_d_eps.iter_mut().for_each(|v| *v /= n as f64);
    round.task1 /= n as f64;
    round.task2 /= n as f64;
    Ok(round)
}

/// Loss and gradients at `(Θ, ε)` of the state.
pub fn total_grads<M: SampleMap>(
    state: &CalibrationState,
    case: &NetworkCase,
    uq: &EmpiricalErrorModel,
    cal_data: &Dataset,
    config: &CalibrationConfig,
    exec: &M,
) -> Result<(Matrix, Vec<f64>, LossBreakdown), CalibrationError> {
    check_dims(&state.theta, cal_data)?;
    if state.epsilon.len() != case.n_wind {
        return Err(CalibrationError::DimensionMismatch("epsilon vs farms"));
    }
    let uq = uq.clone().with_epsilon(state.epsilon.clone());
    let f = forecasts(&state.theta, &cal_data.features);
    let round = market_round(case, &uq, &f, &cal_data.actuals, config, exec)?;
    let mse = mse_from_forecasts(&f, &cal_data.actuals);
    let mut d_theta = Matrix::zeros(state.theta.rows(), state.theta.cols());
    for j in 0..state.theta.cols() {
        let g = theta_column_grad(
            &cal_data.features,
            &round.d_loss_d_yhat.col(j),
            &f.col(j),
            &cal_data.actuals.col(j),
            config.eta,
        );
        d_theta.set_col(j, &g);
    }
    Ok((d_theta, round.d_loss_d_eps, LossBreakdown::new(mse, round.task1, round.task2, config.eta)))
}

/// Stop test between consecutive losses; `stop_delta` defaults to a
/// fraction of the first loss.
pub fn should_stop(history: &[LossBreakdown], config: &CalibrationConfig) -> bool {
    let [.., prev, last] = history else { return false };
    let delta = config.stop_delta.unwrap_or_else(|| 1e-5 * history[0].total.abs());
    (last.total - prev.total).abs() < delta
}

impl CalibrationState {
    pub fn new(theta: Matrix, epsilon: Vec<f64>) -> Self {
        Self { theta, epsilon, iter: 0, loss_history: Vec::new(), converged: false, trajectory: Vec::new() }
    }

    /// Records one evaluated iteration.
    pub fn record(&mut self, loss: LossBreakdown, d_loss_d_eps: Vec<f64>) {
        self.trajectory.push(IterationRecord {
            iter: self.iter,
            theta: self.theta.clone(),
            epsilon: self.epsilon.clone(),
            loss,
            d_loss_d_eps,
        });
        self.loss_history.push(loss);
        self.iter += 1;
    }
}

/// Runs the calibration loop: the error model is built once from `Θ0`, then
/// each iteration evaluates the loss and gradients at the current
/// parameters, stops if the loss change is below the threshold, and
/// otherwise takes one projected gradient step.
pub fn calibrate<M: SampleMap>(
    case: &NetworkCase,
    uq_data: &Dataset,
    cal_data: &Dataset,
    theta0: &Matrix,
    eps0: &[f64],
    config: &CalibrationConfig,
    exec: &M,
) -> Result<CalibrationState, CalibrationError> {
    calibrate_with(case, uq_data, cal_data, theta0, eps0, config, exec, |_| {})
}

/// [`calibrate`] with a callback after every recorded iteration.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_with<M: SampleMap, C: FnMut(&IterationRecord)>(
    case: &NetworkCase,
    uq_data: &Dataset,
    cal_data: &Dataset,
    theta0: &Matrix,
    eps0: &[f64],
    config: &CalibrationConfig,
    exec: &M,
    mut on_iter: C,
) -> Result<CalibrationState, CalibrationError> {
    config.validate()?;
    check_dims(theta0, cal_data)?;
    if eps0.len() != case.n_wind || cal_data.n_wind() != case.n_wind {
        return Err(CalibrationError::DimensionMismatch("farms vs case"));
    }
    if eps0.iter().any(|e| !(*e >= config.eps_floor) || !e.is_finite()) {
        return Err(CalibrationError::InvalidConfig("eps0 must be finite and >= eps_floor"));
    }
    let uq = config.error_model(theta0, uq_data)?;
    let mut state = CalibrationState::new(theta0.clone(), eps0.to_vec());
    while state.iter < config.max_iters {
        let (d_theta, d_eps, loss) = total_grads(&state, case, &uq, cal_data, config, exec)?;
        if !d_theta.is_finite() || d_eps.iter().any(|v| !v.is_finite()) || !loss.total.is_finite() {
            return Err(CalibrationError::NonFiniteGradient { iter: state.iter });
        }
        state.record(loss, d_eps.clone());
        on_iter(state.trajectory.last().expect("just recorded"));
        log::debug!(
            "iter {}: total {:.6} task1 {:.6} task2 {:.6} mse {:.6} eps {:?}",
            state.iter - 1,
            loss.total,
            loss.task1,
            loss.task2,
            loss.mse,
            state.epsilon
        );
        if should_stop(&state.loss_history, config) {
            state.converged = true;
            break;
        }
        for j in 0..state.theta.cols() {
            let next = theta_column_step(&state.theta.col(j), &d_theta.col(j), config.lr_theta);
            state.theta.set_col(j, &next);
        }
        state.epsilon = eps_step(&state.epsilon, &d_eps, config.lr_eps, config.eps_floor);
    }
    Ok(state)
}
