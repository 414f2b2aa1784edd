//! Transport and clock abstractions.
//!
//! Discovery strategies and probes talk to remotes only through
//! [`Transport`]: a TCP-style connectivity check plus a request/response byte
//! exchange bounded by a deadline. The simulator and the live Bitcoin-family
//! TCP client both implement it.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::profile::Magic;
use crate::wire_bitcoin::{Frames, Message};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection refused")]
    Refused,
    #[error("i/o error: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    /// Opens and closes a connection (the "TCP ping").
    fn connect(&self, to: SocketAddr, timeout: Duration) -> Result<(), TransportError>;

    /// Sends `request` and returns whatever the remote answered before it
    /// finished, closed, or the deadline passed. An empty reply means the
    /// remote accepted the connection but said nothing.
    fn exchange(&self, to: SocketAddr, request: &[u8], timeout: Duration) -> Result<Vec<u8>, TransportError>;
}

/// Source of time for crawls and probes. Simulated clocks never block.
pub trait Clock: Send + Sync {
    /// Seconds since the Unix epoch.
    fn now(&self) -> i64;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration)
    }
}

fn map_io(e: std::io::Error) -> TransportError {
    match e.kind() {
        ErrorKind::TimedOut | ErrorKind::WouldBlock => TransportError::Timeout,
        ErrorKind::ConnectionRefused => TransportError::Refused,
        _ => TransportError::Io(e.to_string()),
    }
}

/// Live TCP transport for Bitcoin-family peers.
///
/// A request is a pipelined stream of frames; the reply is read until it
/// contains a multi-entry `addr` or a `pong`, the peer closes, or the
/// deadline passes.
#[derive(Debug, Clone)]
pub struct TcpTransport {
    magic: Magic,
}

impl TcpTransport {
    pub fn new(magic: Magic) -> Self {
        TcpTransport { magic }
    }

    fn reply_complete(&self, buf: &[u8]) -> bool {
        Frames::new(self.magic, buf).filter_map(Result::ok).any(|f| match Message::from_wire(&f) {
            Ok(Message::Addr(entries)) => entries.len() > 1,
            Ok(Message::Pong(_)) => true,
            _ => false,
        })
    }
}

impl Transport for TcpTransport {
    fn connect(&self, to: SocketAddr, timeout: Duration) -> Result<(), TransportError> {
        TcpStream::connect_timeout(&to, timeout).map(drop).map_err(map_io)
    }

    fn exchange(&self, to: SocketAddr, request: &[u8], timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut stream = TcpStream::connect_timeout(&to, timeout).map_err(map_io)?;
        stream.set_write_timeout(Some(timeout)).map_err(map_io)?;
        stream.write_all(request).map_err(map_io)?;
        let mut buf = Vec::new();
        let mut chunk = [0u8; 16 * 1024];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            stream.set_read_timeout(Some(left)).map_err(map_io)?;
            match stream.read(&mut chunk) {
                Ok(0) => break,
                Ok(n) => {
                    buf.extend_from_slice(&chunk[..n]);
                    if self.reply_complete(&buf) {
                        break;
                    }
                }
                Err(e) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => break,
                Err(e) if e.kind() == ErrorKind::ConnectionReset && !buf.is_empty() => break,
                Err(e) => return Err(map_io(e)),
            }
        }
        Ok(buf)
    }
}
