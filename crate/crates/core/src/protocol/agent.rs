use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibrate::{forecast_one, theta_column_grad, theta_column_step};
use crate::data::Dataset;
use crate::matrix::Matrix;

use super::message::{ErrorCode, Message, PROTOCOL_VERSION};
use super::{Link, LinkError, Session, SessionError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: u32,
    /// Case indices of the farms this agent forecasts, in column order of
    /// its parameters.
    pub farms: Vec<usize>,
    pub lr_theta: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentError {
    pub code: ErrorCode,
    pub detail: String,
}

fn err(code: ErrorCode, detail: String) -> AgentError {
    AgentError { code, detail }
}

/// Forecasting agent. Its parameters never leave this struct.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    /// features × own farms
    theta: Matrix,
    round: Option<Round>,
    last_iter: Option<u64>,
    history: Vec<Matrix>,
}

#[derive(Debug, Clone)]
struct Round {
    iter: u64,
    features: Matrix,
    actuals: Matrix,
    forecasts: Matrix,
    updated: bool,
}

/// Result of handling one message.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Reply(Message),
    Idle,
    Finished,
}

fn to_matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<Matrix, AgentError> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(err(ErrorCode::BadLength, format!("{what}: expected non-empty rows of length {cols}")));
    }
    Ok(Matrix::from_rows(rows).expect("checked lengths"))
}

impl Agent {
    pub fn new(config: AgentConfig, theta0: Matrix) -> Result<Self, AgentError> {
        if theta0.cols() != config.farms.len() || config.farms.is_empty() {
            return Err(err(ErrorCode::BadFarms, "theta0 needs one column per owned farm".into()));
        }
        Ok(Self { config, theta: theta0, round: None, last_iter: None, history: Vec::new() })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// Current local parameters.
    pub fn theta(&self) -> &Matrix {
        &self.theta
    }

    /// Parameters used for each round's forecasts, in round order.
    pub fn theta_history(&self) -> &[Matrix] {
        &self.history
    }

    pub fn last_iter(&self) -> Option<u64> {
        self.last_iter
    }

    /// `Hello` and `UqSubmit`; the errors use the initial parameters.
    pub fn opening(&self, uq_data: &Dataset) -> Result<[Message; 2], AgentError> {
        let k = self.config.farms.len();
        if uq_data.n_wind() != k || uq_data.n_features() != self.theta.rows() {
            return Err(err(ErrorCode::BadLength, "UQ data does not match the agent's parameters".into()));
        }
        let errors = (0..k)
            .map(|c| {
                let col = self.theta.col(c);
                (0..uq_data.len())
                    .map(|i| uq_data.actuals[(i, c)] - forecast_one(&col, uq_data.features.row(i)))
                    .collect()
            })
            .collect();
        Ok([
            Message::Hello {
                agent_id: self.config.agent_id,
                version: PROTOCOL_VERSION,
                n_features: self.theta.rows(),
                farms: self.config.farms.clone(),
            },
            Message::UqSubmit { agent_id: self.config.agent_id, errors },
        ])
    }

    pub fn handle(&mut self, iter: u64, message: Message) -> Result<Step, AgentError> {
        match message {
            Message::RoundStart { samples, actuals } => {
                let expected = self.last_iter.map_or(0, |i| i + 1);
                if iter != expected {
                    return Err(err(ErrorCode::BadIter, format!("round {iter}, expected {expected}")));
                }
                let features = to_matrix(&samples, self.theta.rows(), "samples")?;
                let actuals = to_matrix(&actuals, self.config.farms.len(), "actuals")?;
                if actuals.rows() != features.rows() {
                    return Err(err(ErrorCode::BadLength, "actuals vs samples".into()));
                }
                let mut forecasts = Matrix::zeros(features.rows(), self.theta.cols());
                for c in 0..self.theta.cols() {
                    let col = self.theta.col(c);
                    for i in 0..features.rows() {
                        forecasts[(i, c)] = forecast_one(&col, features.row(i));
                    }
                }
                let reply: Vec<Vec<f64>> = (0..forecasts.rows()).map(|i| forecasts.row(i).to_vec()).collect();
                self.history.push(self.theta.clone());
                self.last_iter = Some(iter);
                self.round = Some(Round { iter, features, actuals, forecasts, updated: false });
                Ok(Step::Reply(Message::ForecastReply { agent_id: self.config.agent_id, forecasts: reply }))
            }
            Message::GradSignal { agent_id, d_loss_d_yhat } => {
                if agent_id != self.config.agent_id {
                    return Err(err(ErrorCode::Unexpected, format!("signal for agent {agent_id}")));
                }
                let round = match &mut self.round {
                    Some(r) if r.iter == iter && !r.updated => r,
                    _ => return Err(err(ErrorCode::BadIter, format!("no open round {iter}"))),
                };
                let n = round.features.rows();
                if d_loss_d_yhat.len() != n {
                    return Err(err(
                        ErrorCode::BadLength,
                        format!("gradient signal has {} samples, expected {n}", d_loss_d_yhat.len()),
                    ));
                }
                let signal = to_matrix(&d_loss_d_yhat, self.theta.cols(), "gradient signal")?;
                for c in 0..self.theta.cols() {
                    let g = theta_column_grad(
                        &round.features,
                        &signal.col(c),
                        &round.forecasts.col(c),
                        &round.actuals.col(c),
                        self.config.eta,
                    );
                    let next = theta_column_step(&self.theta.col(c), &g, self.config.lr_theta);
                    self.theta.set_col(c, &next);
                }
                round.updated = true;
                Ok(Step::Reply(Message::UpdateAck {
                    agent_id: self.config.agent_id,
                    local_mse_grad_applied: self.config.eta != 0.0,
                }))
            }
            Message::RoundResult { .. } => Ok(Step::Idle),
            Message::Shutdown { .. } => Ok(Step::Finished),
            other => Err(err(ErrorCode::Unexpected, format!("agent cannot handle {}", other.kind()))),
        }
    }
}

/// Drives one agent over a session until the operator shuts it down.
/// Returns the final local parameters.
pub fn run_agent_session<L: Link>(
    agent: &mut Agent,
    uq_data: &Dataset,
    session: &mut Session<L>,
    timeout_ms: u64,
) -> Result<Matrix, SessionError> {
    let protocol = |e: AgentError| SessionError::Protocol { code: e.code, detail: e.detail };
    for m in agent.opening(uq_data).map_err(protocol)? {
        session.send(0, m)?;
    }
    loop {
        let env = match session.recv(timeout_ms) {
            Ok(env) => env,
            Err(SessionError::Protocol { code, detail }) => {
                let _ = session.send(0, Message::ProtocolError { code, detail: detail.clone() });
                return Err(SessionError::Protocol { code, detail });
            }
            Err(e) => return Err(e),
        };
        match agent.handle(env.iter, env.message) {
            Ok(Step::Reply(m)) => session.send(env.iter, m)?,
            Ok(Step::Idle) => {}
            Ok(Step::Finished) => return Ok(agent.theta().clone()),
            Err(e) => {
                let _ = session.send(env.iter, Message::ProtocolError { code: e.code, detail: e.detail.clone() });
                return Err(protocol(e));
            }
        }
    }
}

impl From<LinkError> for SessionError {
    fn from(e: LinkError) -> Self {
        SessionError::Link(e)
    }
}
