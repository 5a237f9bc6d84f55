use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibrate::LossBreakdown;

pub const PROTOCOL_VERSION: u32 = 1;

/// Payload of one protocol message. Matrices are sent as nested lists,
/// outer index first as named in the field docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Message {
    Hello {
        agent_id: u32,
        version: u32,
        n_features: usize,
        /// Wind farms (case indices) this agent forecasts.
        farms: Vec<usize>,
    },
    UqSubmit {
        agent_id: u32,
        /// farm × UQ sample, MW, computed with the agent's initial parameters.
        errors: Vec<Vec<f64>>,
    },
    RoundStart {
        /// sample × feature
        samples: Vec<Vec<f64>>,
        /// sample × the receiving agent's farms, MW; used for the MSE term.
        actuals: Vec<Vec<f64>>,
    },
    ForecastReply {
        agent_id: u32,
        /// sample × farm, MW
        forecasts: Vec<Vec<f64>>,
    },
    GradSignal {
        agent_id: u32,
        /// sample × farm, `∂L/∂ŷ` per sample (not averaged)
        d_loss_d_yhat: Vec<Vec<f64>>,
    },
    UpdateAck {
        agent_id: u32,
        local_mse_grad_applied: bool,
    },
    RoundResult {
        breakdown: LossBreakdown,
        epsilon: Vec<f64>,
        converged: bool,
    },
    Shutdown {
        reason: String,
    },
    ProtocolError {
        code: ErrorCode,
        detail: String,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::UqSubmit { .. } => "uq_submit",
            Message::RoundStart { .. } => "round_start",
            Message::ForecastReply { .. } => "forecast_reply",
            Message::GradSignal { .. } => "grad_signal",
            Message::UpdateAck { .. } => "update_ack",
            Message::RoundResult { .. } => "round_result",
            Message::Shutdown { .. } => "shutdown",
            Message::ProtocolError { .. } => "protocol_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadLength,
    BadSeq,
    BadIter,
    Unexpected,
    Malformed,
    FrameTooLarge,
    VersionMismatch,
    BadFarms,
    Timeout,
}

/// What goes on the wire: the message plus sequence and round numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub seq: u64,
    pub iter: u64,
    pub message: Message,
}
