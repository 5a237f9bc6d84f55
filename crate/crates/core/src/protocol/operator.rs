use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibrate::{
    eps_step, market_round, mse_from_forecasts, should_stop, CalibrationConfig, CalibrationError, LossBreakdown,
    SampleMap,
};
use crate::case::NetworkCase;
use crate::data::Dataset;
use crate::matrix::Matrix;
use crate::uq::EmpiricalErrorModel;

use super::message::{ErrorCode, Message, PROTOCOL_VERSION};
use super::{Link, LinkError, Session, SessionError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorOptions {
    /// Deadline for each expected message, milliseconds.
    pub timeout_ms: u64,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        Self { timeout_ms: 30_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub iter: usize,
    pub epsilon: Vec<f64>,
    pub loss: LossBreakdown,
    pub d_loss_d_eps: Vec<f64>,
}

/// Operator-side view of a run. The forecast parameters stay with the agents.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorOutcome {
    pub epsilon: Vec<f64>,
    pub iter: usize,
    pub loss_history: Vec<LossBreakdown>,
    pub converged: bool,
    pub trajectory: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorFailure {
    AgentTimeout { agent: usize, phase: &'static str },
    ConnectionLost { agent: usize, phase: &'static str },
    Protocol { agent: usize, code: ErrorCode, detail: String },
    Calibration(CalibrationError),
}

/// A failed run together with the state after the last completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorError {
    pub failure: OperatorFailure,
    pub completed: OperatorOutcome,
}

struct Peer {
    id: u32,
    farms: Vec<usize>,
}

struct Ctx<'a, L> {
    sessions: &'a mut [Session<L>],
    timeout_ms: u64,
}

fn classify(agent: usize, phase: &'static str, e: SessionError) -> OperatorFailure {
    match e {
        SessionError::Link(LinkError::Timeout) => OperatorFailure::AgentTimeout { agent, phase },
        SessionError::Link(_) => OperatorFailure::ConnectionLost { agent, phase },
        SessionError::Protocol { code, detail } | SessionError::Remote { code, detail } => {
            OperatorFailure::Protocol { agent, code, detail }
        }
    }
}

fn violation(agent: usize, code: ErrorCode, detail: String) -> OperatorFailure {
    OperatorFailure::Protocol { agent, code, detail }
}

impl<L: Link> Ctx<'_, L> {
    fn send(&mut self, agent: usize, iter: u64, m: Message, phase: &'static str) -> Result<(), OperatorFailure> {
        self.sessions[agent].send(iter, m).map_err(|e| classify(agent, phase, e))
    }

    fn recv(&mut self, agent: usize, iter: u64, phase: &'static str) -> Result<Message, OperatorFailure> {
        let env = self.sessions[agent].recv(self.timeout_ms).map_err(|e| classify(agent, phase, e))?;
        if env.iter != iter {
            return Err(violation(agent, ErrorCode::BadIter, format!("{phase}: iter {} during round {iter}", env.iter)));
        }
        Ok(env.message)
    }

    /// Tells every agent why the run ends; failures here are ignored.
    fn abort(&mut self, iter: u64, failure: &OperatorFailure) {
        let (code, detail) = match failure {
            OperatorFailure::AgentTimeout { agent, phase } => (ErrorCode::Timeout, format!("agent {agent} timed out in {phase}")),
            OperatorFailure::ConnectionLost { agent, phase } => (ErrorCode::Timeout, format!("agent {agent} lost in {phase}")),
            OperatorFailure::Protocol { code, detail, .. } => (*code, detail.clone()),
            OperatorFailure::Calibration(e) => (ErrorCode::Unexpected, format!("{e}")),
        };
        for s in self.sessions.iter_mut() {
            let _ = s.send(iter, Message::ProtocolError { code, detail: detail.clone() });
        }
    }
}

fn expect_len(agent: usize, got: usize, want: usize, what: &str) -> Result<(), OperatorFailure> {
    if got != want {
        return Err(violation(agent, ErrorCode::BadLength, format!("{what}: {got} entries, expected {want}")));
    }
    Ok(())
}

fn handshake<L: Link>(
    ctx: &mut Ctx<'_, L>,
    case: &NetworkCase,
    n_features: usize,
    config: &CalibrationConfig,
) -> Result<(Vec<Peer>, EmpiricalErrorModel), OperatorFailure> {
    let nw = case.n_wind;
    let mut owner = vec![None; nw];
    let mut peers = Vec::new();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; nw];
    for a in 0..ctx.sessions.len() {
        let (farms, id) = match ctx.recv(a, 0, "hello")? {
            Message::Hello { agent_id, version, n_features: nf, farms } => {
                if version != PROTOCOL_VERSION {
                    return Err(violation(a, ErrorCode::VersionMismatch, format!("version {version}")));
                }
                expect_len(a, nf, n_features, "features")?;
                (farms, agent_id)
            }
            m => return Err(violation(a, ErrorCode::Unexpected, format!("{} before hello", m.kind()))),
        };
        if farms.is_empty() {
            return Err(violation(a, ErrorCode::BadFarms, "no farms".into()));
        }
        for &f in &farms {
            if f >= nw || owner[f].is_some() {
                return Err(violation(a, ErrorCode::BadFarms, format!("farm {f} unknown or taken")));
            }
            owner[f] = Some(a);
        }
        match ctx.recv(a, 0, "uq_submit")? {
            Message::UqSubmit { agent_id, errors } if agent_id == id => {
                expect_len(a, errors.len(), farms.len(), "error rows")?;
                for (f, row) in farms.iter().zip(errors) {
                    rows[*f] = Some(row);
                }
            }
            m => return Err(violation(a, ErrorCode::Unexpected, format!("{} instead of uq_submit", m.kind()))),
        }
        peers.push(Peer { id, farms });
    }
    if let Some(f) = owner.iter().position(Option::is_none) {
        return Err(violation(0, ErrorCode::BadFarms, format!("farm {f} has no agent")));
    }
    let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.expect("every farm owned")).collect();
    let ns = rows[0].len();
    for (f, r) in rows.iter().enumerate() {
        expect_len(owner[f].expect("owned"), r.len(), ns, "UQ samples")?;
    }
    let errors = Matrix::from_rows(&rows).ok_or_else(|| violation(0, ErrorCode::BadLength, "UQ rows".into()))?;
    let s = config.support_mw;
    let uq = EmpiricalErrorModel::from_errors(errors, vec![-s; nw], vec![s; nw], config.risk_level)
        .map_err(|e| OperatorFailure::Calibration(e.into()))?;
    Ok((peers, uq))
}

/// Runs the operator side over already-connected sessions, one per agent.
///
/// Per round: send the calibration samples, collect forecasts, clear both
/// market stages, and either stop (loss change below the threshold) or send
/// each agent its gradient signal, update `ε` locally and wait for all
/// acknowledgements. A round's results are committed only once it completes.
#[allow(clippy::too_many_arguments)]
pub fn run_operator<L: Link, M: SampleMap>(
    case: &NetworkCase,
    cal_data: &Dataset,
    eps0: &[f64],
    config: &CalibrationConfig,
    sessions: &mut [Session<L>],
    options: &OperatorOptions,
    exec: &M,
) -> Result<OperatorOutcome, OperatorError> {
    let mut done = OperatorOutcome { epsilon: eps0.to_vec(), ..Default::default() };
    let fail = |failure, done: &OperatorOutcome| OperatorError { failure, completed: done.clone() };
    if let Err(e) = config.validate() {
        return Err(fail(OperatorFailure::Calibration(e), &done));
    }
    if eps0.len() != case.n_wind || cal_data.n_wind() != case.n_wind || cal_data.is_empty() {
        let e = CalibrationError::DimensionMismatch("calibration data, eps0 and case farms");
        return Err(fail(OperatorFailure::Calibration(e), &done));
    }
    let mut ctx = Ctx { sessions, timeout_ms: options.timeout_ms };
    let (peers, uq) = match handshake(&mut ctx, case, cal_data.n_features(), config) {
        Ok(v) => v,
        Err(f) => {
            ctx.abort(0, &f);
            return Err(fail(f, &done));
        }
    };
    let n = cal_data.len();
    let samples: Vec<Vec<f64>> = (0..n).map(|i| cal_data.features.row(i).to_vec()).collect();

    while done.iter < config.max_iters {
        let iter = done.iter as u64;
        match round(&mut ctx, case, cal_data, &samples, &peers, &uq, config, &done, exec) {
            Ok(next) => {
                done = next;
                if done.converged {
                    break;
                }
            }
            Err(f) => {
                ctx.abort(iter, &f);
                return Err(fail(f, &done));
            }
        }
    }
    let reason = if done.converged { "converged" } else { "iteration limit" };
    for s in ctx.sessions.iter_mut() {
        let _ = s.send(done.iter as u64, Message::Shutdown { reason: reason.into() });
    }
    Ok(done)
}

#[allow(clippy::too_many_arguments)]
fn round<L: Link, M: SampleMap>(
    ctx: &mut Ctx<'_, L>,
    case: &NetworkCase,
    cal_data: &Dataset,
    samples: &[Vec<f64>],
    peers: &[Peer],
    uq: &EmpiricalErrorModel,
    config: &CalibrationConfig,
    done: &OperatorOutcome,
    exec: &M,
) -> Result<OperatorOutcome, OperatorFailure> {
    let iter = done.iter as u64;
    let n = samples.len();
    for (a, p) in peers.iter().enumerate() {
        let actuals = (0..n).map(|i| p.farms.iter().map(|f| cal_data.actuals[(i, *f)]).collect()).collect();
        ctx.send(a, iter, Message::RoundStart { samples: samples.to_vec(), actuals }, "round_start")?;
    }
    let mut forecasts = Matrix::zeros(n, case.n_wind);
    for (a, p) in peers.iter().enumerate() {
        match ctx.recv(a, iter, "forecast_reply")? {
            Message::ForecastReply { forecasts: rows, .. } => {
                expect_len(a, rows.len(), n, "forecast samples")?;
                for (i, row) in rows.iter().enumerate() {
                    expect_len(a, row.len(), p.farms.len(), "forecast farms")?;
                    for (f, v) in p.farms.iter().zip(row) {
                        forecasts[(i, *f)] = *v;
                    }
                }
            }
            m => return Err(violation(a, ErrorCode::Unexpected, format!("{} instead of forecast_reply", m.kind()))),
        }
    }
    if !forecasts.is_finite() {
        return Err(violation(0, ErrorCode::Malformed, "non-finite forecast".into()));
    }

    let uq = uq.clone().with_epsilon(done.epsilon.clone());
    let market = market_round(case, &uq, &forecasts, &cal_data.actuals, config, exec)
        .map_err(OperatorFailure::Calibration)?;
    let mse = mse_from_forecasts(&forecasts, &cal_data.actuals);
    let loss = LossBreakdown::new(mse, market.task1, market.task2, config.eta);
    if !market.d_loss_d_yhat.is_finite() || market.d_loss_d_eps.iter().any(|v| !v.is_finite()) || !loss.total.is_finite()
    {
        return Err(OperatorFailure::Calibration(CalibrationError::NonFiniteGradient { iter: done.iter }));
    }

    let mut next = done.clone();
    next.trajectory.push(RoundRecord {
        iter: done.iter,
        epsilon: done.epsilon.clone(),
        loss,
        d_loss_d_eps: market.d_loss_d_eps.clone(),
    });
    next.loss_history.push(loss);
    next.iter += 1;
    if should_stop(&next.loss_history, config) {
        next.converged = true;
    } else {
        for (a, p) in peers.iter().enumerate() {
            let rows = (0..n).map(|i| p.farms.iter().map(|f| market.d_loss_d_yhat[(i, *f)]).collect()).collect();
            ctx.send(a, iter, Message::GradSignal { agent_id: p.id, d_loss_d_yhat: rows }, "grad_signal")?;
        }
        next.epsilon = eps_step(&done.epsilon, &market.d_loss_d_eps, config.lr_eps, config.eps_floor);
        for a in 0..peers.len() {
            match ctx.recv(a, iter, "update_ack")? {
                Message::UpdateAck { .. } => {}
                m => return Err(violation(a, ErrorCode::Unexpected, format!("{} instead of update_ack", m.kind()))),
            }
        }
    }
    for a in 0..peers.len() {
        let m = Message::RoundResult { breakdown: loss, epsilon: next.epsilon.clone(), converged: next.converged };
        ctx.send(a, iter, m, "round_result")?;
    }
    Ok(next)
}
