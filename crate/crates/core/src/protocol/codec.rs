//! Framing: a 4-byte big-endian length, then a UTF-8 JSON object
//! `{"type", "seq", "iter", "payload"}`. Payload keys are written sorted.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::message::{Envelope, ErrorCode, Message};

/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecError {
    pub code: ErrorCode,
    pub detail: String,
}

impl CodecError {
    fn malformed(detail: impl ToString) -> Self {
        Self { code: ErrorCode::Malformed, detail: detail.to_string() }
    }
}

#[derive(Serialize, Deserialize)]
struct Wire {
    #[serde(rename = "type")]
    kind: String,
    seq: u64,
    iter: u64,
    #[serde(default)]
    payload: Value,
}

/// JSON body of one message, without the length prefix.
pub fn encode_body(env: &Envelope) -> Vec<u8> {
    let tagged = serde_json::to_value(&env.message).expect("messages always serialize");
    let mut obj = match tagged {
        Value::Object(m) => m,
        _ => unreachable!("tagged enum serializes to an object"),
    };
    let payload = obj.remove("payload").unwrap_or(Value::Object(Map::new()));
    let wire = Wire { kind: env.message.kind().into(), seq: env.seq, iter: env.iter, payload };
    serde_json::to_vec(&wire).expect("values always serialize")
}

/// Length-prefixed frame.
pub fn encode(env: &Envelope) -> Vec<u8> {
    let body = encode_body(env);
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_body(body: &[u8]) -> Result<Envelope, CodecError> {
    let text = core::str::from_utf8(body).map_err(|_| CodecError::malformed("frame is not UTF-8"))?;
    let wire: Wire = serde_json::from_str(text).map_err(CodecError::malformed)?;
    let mut obj = Map::new();
    obj.insert("type".into(), Value::String(wire.kind.clone()));
    obj.insert("payload".into(), wire.payload);
    let message: Message = serde_json::from_value(Value::Object(obj))
        .map_err(|e| CodecError::malformed(format!("{} payload: {e}", wire.kind)))?;
    Ok(Envelope { seq: wire.seq, iter: wire.iter, message })
}

/// Accumulates stream bytes and yields complete frames.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete body, if any.
    pub fn next_body(&mut self) -> Result<Option<Vec<u8>>, CodecError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
        if len > MAX_FRAME {
            return Err(CodecError { code: ErrorCode::FrameTooLarge, detail: format!("frame of {len} bytes") });
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let body = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(body))
    }

    pub fn next_envelope(&mut self) -> Result<Option<Envelope>, CodecError> {
        match self.next_body()? {
            Some(b) => decode_body(&b).map(Some),
            None => Ok(None),
        }
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}
