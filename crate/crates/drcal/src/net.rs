//! Stream transports for the distributed protocol.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use drcal_core::protocol::{FrameReader, Link, LinkError};

use crate::error::Error;

/// Length-prefixed frames over a TCP stream.
#[derive(Debug)]
pub struct TcpLink {
    stream: TcpStream,
    reader: FrameReader,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        Self { stream, reader: FrameReader::new() }
    }

    pub fn peer(&self) -> String {
        self.stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "?".into())
    }
}

fn io_err(e: std::io::Error) -> LinkError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => LinkError::Timeout,
        ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted | ErrorKind::BrokenPipe => {
            LinkError::Closed
        }
        _ => LinkError::Io(e.to_string()),
    }
}

impl Link for TcpLink {
    fn send(&mut self, body: &[u8]) -> Result<(), LinkError> {
        let mut frame = Vec::with_capacity(body.len() + 4);
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(body);
        self.stream.write_all(&frame).map_err(io_err)?;
        self.stream.flush().map_err(io_err)
    }

    fn recv(&mut self, timeout_ms: u64) -> Result<Vec<u8>, LinkError> {
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        let mut buf = [0u8; 64 * 1024];
        loop {
            if let Some(body) = self.reader.next_body().map_err(|e| LinkError::Io(e.detail))? {
                return Ok(body);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(LinkError::Timeout);
            }
            self.stream.set_read_timeout(Some(left)).map_err(io_err)?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(LinkError::Closed),
                Ok(n) => self.reader.push(&buf[..n]),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(io_err(e)),
            }
        }
    }
}

/// Accepts exactly `n` connections within `timeout_ms`, in arrival order.
pub fn accept_agents(listener: &TcpListener, n: usize, timeout_ms: u64) -> Result<Vec<TcpLink>, Error> {
    listener.set_nonblocking(true).map_err(|e| Error::Net(e.to_string()))?;
    let deadline = Instant::now() + Duration::from_millis(timeout_ms);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        match listener.accept() {
            Ok((stream, addr)) => {
                stream.set_nonblocking(false).map_err(|e| Error::Net(e.to_string()))?;
                log::info!("agent connected from {addr}");
                out.push(TcpLink::new(stream));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(Error::Net(format!("only {} of {n} agents connected in time", out.len())));
                }
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(Error::Net(e.to_string())),
        }
    }
    Ok(out)
}

/// Connects, retrying until `timeout_ms` passes (the operator may start later).
pub fn connect(addr: &str, timeout_ms: u64) -> Result<TcpLink, Error> {
    let deadline = Instant::now() + Duration::from_millis(timeout_ms);
    loop {
        let attempt = addr
            .to_socket_addrs()
            .map_err(|e| Error::Usage(format!("--connect {addr}: {e}")))?
            .find_map(|a| TcpStream::connect_timeout(&a, Duration::from_millis(500)).ok());
        match attempt {
            Some(s) => return Ok(TcpLink::new(s)),
            None if Instant::now() >= deadline => return Err(Error::Net(format!("cannot reach {addr}"))),
            None => thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// In-process link over channels. Every body sent in either direction is
/// also copied to the tap, if one is attached.
#[derive(Debug)]
pub struct MemLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    tap: Option<Sender<Vec<u8>>>,
}

impl MemLink {
    pub fn pair() -> (MemLink, MemLink) {
        Self::pair_tapped(None)
    }

    pub fn pair_tapped(tap: Option<Sender<Vec<u8>>>) -> (MemLink, MemLink) {
        let (a_tx, b_rx) = channel();
        let (b_tx, a_rx) = channel();
        (MemLink { tx: a_tx, rx: a_rx, tap: tap.clone() }, MemLink { tx: b_tx, rx: b_rx, tap })
    }
}

impl Link for MemLink {
    fn send(&mut self, body: &[u8]) -> Result<(), LinkError> {
        if let Some(t) = &self.tap {
            let _ = t.send(body.to_vec());
        }
        self.tx.send(body.to_vec()).map_err(|_| LinkError::Closed)
    }

    fn recv(&mut self, timeout_ms: u64) -> Result<Vec<u8>, LinkError> {
        self.rx.recv_timeout(Duration::from_millis(timeout_ms)).map_err(|e| match e {
            RecvTimeoutError::Timeout => LinkError::Timeout,
            RecvTimeoutError::Disconnected => LinkError::Closed,
        })
    }
}
