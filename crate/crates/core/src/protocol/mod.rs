//! Distributed calibration: agents keep their forecast parameters and only
//! exchange forecasts and gradient signals with the operator.
//!
//! Transport is abstracted by [`Link`], which moves whole message bodies;
//! [`Session`] adds sequence numbering and JSON coding on top. The `drcal`
//! crate provides TCP and in-process links.

mod agent;
mod codec;
mod message;
mod operator;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use agent::{run_agent_session, Agent, AgentConfig, AgentError, Step};
pub use codec::{decode_body, encode, encode_body, CodecError, FrameReader, MAX_FRAME};
pub use message::{Envelope, ErrorCode, Message, PROTOCOL_VERSION};
pub use operator::{run_operator, OperatorError, OperatorFailure, OperatorOptions, OperatorOutcome, RoundRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkError {
    Timeout,
    Closed,
    Io(String),
}

/// A bidirectional, ordered, reliable channel of message bodies.
pub trait Link {
    fn send(&mut self, body: &[u8]) -> Result<(), LinkError>;
    /// Waits at most `timeout_ms` for the next body.
    fn recv(&mut self, timeout_ms: u64) -> Result<Vec<u8>, LinkError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    Link(LinkError),
    /// The incoming message broke the protocol.
    Protocol { code: ErrorCode, detail: String },
    /// The peer reported an error and is gone.
    Remote { code: ErrorCode, detail: String },
}

impl From<CodecError> for SessionError {
    fn from(e: CodecError) -> Self {
        SessionError::Protocol { code: e.code, detail: e.detail }
    }
}

/// One end of a connection. Outgoing sequence numbers start at 1 and every
/// incoming message must carry exactly the previous number plus one.
#[derive(Debug)]
pub struct Session<L> {
    link: L,
    next_seq: u64,
    last_seen: u64,
}

impl<L: Link> Session<L> {
    pub fn new(link: L) -> Self {
        Self { link, next_seq: 1, last_seen: 0 }
    }

    pub fn send(&mut self, iter: u64, message: Message) -> Result<(), SessionError> {
        let env = Envelope { seq: self.next_seq, iter, message };
        self.next_seq += 1;
        self.link.send(&encode_body(&env)).map_err(SessionError::Link)
    }

    pub fn recv(&mut self, timeout_ms: u64) -> Result<Envelope, SessionError> {
        let body = self.link.recv(timeout_ms).map_err(SessionError::Link)?;
        let env = decode_body(&body)?;
        if env.seq != self.last_seen + 1 {
            return Err(SessionError::Protocol {
                code: ErrorCode::BadSeq,
                detail: format!("expected seq {}, got {}", self.last_seen + 1, env.seq),
            });
        }
        self.last_seen = env.seq;
        if let Message::ProtocolError { code, detail } = env.message {
            return Err(SessionError::Remote { code, detail });
        }
        Ok(env)
    }

    pub fn link(&self) -> &L {
        &self.link
    }

    pub fn into_link(self) -> L {
        self.link
    }
}
