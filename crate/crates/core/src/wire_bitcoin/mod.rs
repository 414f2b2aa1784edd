//! Bitcoin-family wire protocol.
//!
//! Frames are `magic ‖ command[12] ‖ length:u32le ‖ checksum[4] ‖ payload`,
//! where the checksum is the first four bytes of double-SHA-256 of the
//! payload. Every Bitcoin Core fork shares this layout and differs only in
//! its magic, which isolates the networks at the framing layer.

mod message;
mod reader;

pub use message::{
    build_version_payload, encode_addr_payload, parse_addr_payload, parse_version_payload,
    AddrEntry, Message, VersionInfo, MAX_ADDR_ENTRIES, NODE_NETWORK,
};

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::profile::{Magic, NetworkProfile};

pub const HEADER_LEN: usize = 24;
pub const COMMAND_LEN: usize = 12;
/// Largest payload accepted from a peer (the reference client's `MAX_SIZE`).
pub const MAX_PAYLOAD_LEN: usize = 0x0200_0000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("command {0:?} is longer than 12 bytes or not ASCII")]
    InvalidCommand(String),
    #[error("profile {0} has no magic")]
    NoMagic(String),
    #[error("wrong magic: expected {expected}, found {found}")]
    WrongMagic { expected: Magic, found: Magic },
    #[error("checksum mismatch")]
    BadChecksum,
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("command field has bytes after its terminator")]
    MalformedCommand,
    #[error("payload of {0} bytes exceeds limit")]
    Oversized(usize),
    #[error("malformed addr entry at index {0}")]
    MalformedEntry(usize),
    #[error("addr message declares {0} entries (limit 1000)")]
    TooManyEntries(u64),
    #[error("malformed {command} payload: {reason}")]
    MalformedPayload { command: &'static str, reason: String },
}

/// Zero-padded 12-byte command name.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Command([u8; COMMAND_LEN]);

impl Command {
    pub fn new(name: &str) -> Result<Self, WireError> {
        let bytes = name.as_bytes();
        if bytes.len() > COMMAND_LEN || !name.is_ascii() || bytes.contains(&0) {
            return Err(WireError::InvalidCommand(name.to_string()));
        }
        let mut raw = [0u8; COMMAND_LEN];
        raw[..bytes.len()].copy_from_slice(bytes);
        Ok(Command(raw))
    }

    fn from_raw(raw: [u8; COMMAND_LEN]) -> Result<Self, WireError> {
        let end = raw.iter().position(|&b| b == 0).unwrap_or(COMMAND_LEN);
        if raw[end..].iter().any(|&b| b != 0) || !raw[..end].is_ascii() {
            return Err(WireError::MalformedCommand);
        }
        Ok(Command(raw))
    }

    pub fn as_str(&self) -> &str {
        let end = self.0.iter().position(|&b| b == 0).unwrap_or(COMMAND_LEN);
        // from_raw / new guarantee ASCII
        std::str::from_utf8(&self.0[..end]).unwrap_or("")
    }

    pub fn as_bytes(&self) -> &[u8; COMMAND_LEN] {
        &self.0
    }
}

impl fmt::Debug for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Command({:?})", self.as_str())
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First four bytes of SHA-256(SHA-256(payload)).
pub fn checksum(payload: &[u8]) -> [u8; 4] {
    let first = Sha256::digest(payload);
    let second = Sha256::digest(first);
    [second[0], second[1], second[2], second[3]]
}

/// One decoded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub magic: Magic,
    pub command: Command,
    pub payload: Vec<u8>,
    pub checksum: [u8; 4],
}

impl WireMessage {
    pub fn new(magic: Magic, command: &str, payload: Vec<u8>) -> Result<Self, WireError> {
        let command = Command::new(command)?;
        let checksum = checksum(&payload);
        Ok(WireMessage { magic, command, payload, checksum })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.magic.to_bytes());
        out.extend_from_slice(self.command.as_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.checksum);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes the frame at the start of `raw`, returning it with the number
    /// of bytes it occupied.
    pub fn decode_prefix(expected: Magic, raw: &[u8]) -> Result<(Self, usize), WireError> {
        if raw.len() < HEADER_LEN {
            return Err(WireError::Truncated { needed: HEADER_LEN, available: raw.len() });
        }
        let found = Magic::from_bytes([raw[0], raw[1], raw[2], raw[3]]);
        if found != expected {
            return Err(WireError::WrongMagic { expected, found });
        }
        let mut cmd = [0u8; COMMAND_LEN];
        cmd.copy_from_slice(&raw[4..16]);
        let command = Command::from_raw(cmd)?;
        let len = u32::from_le_bytes([raw[16], raw[17], raw[18], raw[19]]) as usize;
        if len > MAX_PAYLOAD_LEN {
            return Err(WireError::Oversized(len));
        }
        let total = HEADER_LEN + len;
        if raw.len() < total {
            return Err(WireError::Truncated { needed: total, available: raw.len() });
        }
        let sum = [raw[20], raw[21], raw[22], raw[23]];
        let payload = raw[HEADER_LEN..total].to_vec();
        if checksum(&payload) != sum {
            return Err(WireError::BadChecksum);
        }
        Ok((WireMessage { magic: found, command, payload, checksum: sum }, total))
    }
}

fn profile_magic(profile: &NetworkProfile) -> Result<Magic, WireError> {
    profile.magic.ok_or_else(|| WireError::NoMagic(profile.name.clone()))
}

/// Frames `payload` under `profile`'s magic.
pub fn encode_message(profile: &NetworkProfile, command: &str, payload: &[u8]) -> Result<Vec<u8>, WireError> {
    let magic = profile_magic(profile)?;
    Ok(WireMessage::new(magic, command, payload.to_vec())?.encode())
}

/// Decodes one frame, accepting it only under `profile`'s magic.
pub fn decode_message(profile: &NetworkProfile, raw: &[u8]) -> Result<WireMessage, WireError> {
    let magic = profile_magic(profile)?;
    WireMessage::decode_prefix(magic, raw).map(|(m, _)| m)
}

/// Splits a byte stream into frames. Stops at the first error, which is
/// yielded once; a clean end of input yields nothing further.
pub struct Frames<'a> {
    magic: Magic,
    rest: &'a [u8],
    failed: bool,
}

impl<'a> Frames<'a> {
    pub fn new(magic: Magic, raw: &'a [u8]) -> Self {
        Frames { magic, rest: raw, failed: false }
    }
}

impl Iterator for Frames<'_> {
    type Item = Result<WireMessage, WireError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.rest.is_empty() {
            return None;
        }
        match WireMessage::decode_prefix(self.magic, self.rest) {
            Ok((msg, used)) => {
                self.rest = &self.rest[used..];
                Some(Ok(msg))
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Concatenates typed messages into one byte stream.
pub fn encode_stream(magic: Magic, messages: &[Message]) -> Vec<u8> {
    messages.iter().flat_map(|m| m.to_wire(magic).encode()).collect()
}
