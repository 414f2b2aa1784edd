//! Typed payloads for the messages a crawler exchanges.

use std::net::{IpAddr, Ipv6Addr, SocketAddr};

use serde::{Deserialize, Serialize};

use super::reader::{write_varint, Reader};
use super::{Command, WireError, WireMessage};
use crate::profile::{Magic, NetworkProfile};

/// An `addr` payload carries at most this many entries.
pub const MAX_ADDR_ENTRIES: usize = 1000;
pub const NODE_NETWORK: u64 = 1;

const USER_AGENT: &str = concat!("/p2pscope:", env!("CARGO_PKG_VERSION"), "/");
const MAX_USER_AGENT_LEN: u64 = 256;

/// Fields a peer reveals in its `version` message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionInfo {
    pub protocol_version: i32,
    pub services: u64,
    pub timestamp: i64,
    pub receiver: SocketAddr,
    pub sender: SocketAddr,
    pub nonce: u64,
    pub user_agent: String,
    pub start_height: i32,
    pub relay: bool,
}

impl VersionInfo {
    pub fn advertised_port(&self) -> u16 {
        self.sender.port()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(86 + self.user_agent.len());
        out.extend_from_slice(&self.protocol_version.to_le_bytes());
        out.extend_from_slice(&self.services.to_le_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        write_net_addr(&mut out, 0, self.receiver);
        write_net_addr(&mut out, self.services, self.sender);
        out.extend_from_slice(&self.nonce.to_le_bytes());
        write_varint(&mut out, self.user_agent.len() as u64);
        out.extend_from_slice(self.user_agent.as_bytes());
        out.extend_from_slice(&self.start_height.to_le_bytes());
        out.push(self.relay as u8);
        out
    }
}

/// One peer advertised in an `addr` message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddrEntry {
    pub address: IpAddr,
    pub port: u16,
    pub last_seen: u32,
    pub services: u64,
}

impl AddrEntry {
    pub fn new(endpoint: SocketAddr, last_seen: u32) -> Self {
        AddrEntry { address: endpoint.ip(), port: endpoint.port(), last_seen, services: NODE_NETWORK }
    }

    pub fn endpoint(&self) -> SocketAddr {
        SocketAddr::new(self.address, self.port)
    }
}

fn ip_to_bytes(ip: IpAddr) -> [u8; 16] {
    match ip {
        IpAddr::V4(v4) => v4.to_ipv6_mapped().octets(),
        IpAddr::V6(v6) => v6.octets(),
    }
}

/// IPv4-mapped addresses come back as plain IPv4.
fn ip_from_bytes(bytes: [u8; 16]) -> IpAddr {
    let v6 = Ipv6Addr::from(bytes);
    match v6.to_ipv4_mapped() {
        Some(v4) => IpAddr::V4(v4),
        None => IpAddr::V6(v6),
    }
}

fn write_net_addr(out: &mut Vec<u8>, services: u64, addr: SocketAddr) {
    out.extend_from_slice(&services.to_le_bytes());
    out.extend_from_slice(&ip_to_bytes(addr.ip()));
    out.extend_from_slice(&addr.port().to_be_bytes());
}

fn read_net_addr(r: &mut Reader<'_>) -> Result<(u64, SocketAddr), WireError> {
    let services = r.u64_le()?;
    let ip = ip_from_bytes(r.array()?);
    let port = r.u16_be()?;
    Ok((services, SocketAddr::new(ip, port)))
}

/// Builds the payload of our outgoing `version` message.
pub fn build_version_payload(
    profile: &NetworkProfile,
    self_endpoint: SocketAddr,
    remote_endpoint: SocketAddr,
    nonce: u64,
    timestamp: i64,
) -> Vec<u8> {
    VersionInfo {
        protocol_version: profile.protocol_version,
        services: 0,
        timestamp,
        receiver: remote_endpoint,
        sender: self_endpoint,
        nonce,
        user_agent: USER_AGENT.to_string(),
        start_height: 0,
        relay: false,
    }
    .encode()
}

pub fn parse_version_payload(raw: &[u8]) -> Result<VersionInfo, WireError> {
    let bad = |reason: &str| WireError::MalformedPayload { command: "version", reason: reason.to_string() };
    let mut r = Reader::new(raw);
    let protocol_version = r.i32_le()?;
    if protocol_version < 0 {
        return Err(bad("negative protocol version"));
    }
    let services = r.u64_le()?;
    let timestamp = r.i64_le()?;
    let (_, receiver) = read_net_addr(&mut r)?;
    let (_, sender) = read_net_addr(&mut r)?;
    let nonce = r.u64_le()?;
    let ua_len = r.varint()?;
    if ua_len > MAX_USER_AGENT_LEN {
        return Err(bad("user agent too long"));
    }
    let user_agent =
        String::from_utf8(r.take(ua_len as usize)?.to_vec()).map_err(|_| bad("user agent not UTF-8"))?;
    let start_height = r.i32_le()?;
    // relay flag is absent before protocol 70001
    let relay = if r.remaining() > 0 { r.u8()? != 0 } else { true };
    Ok(VersionInfo { protocol_version, services, timestamp, receiver, sender, nonce, user_agent, start_height, relay })
}

pub fn encode_addr_payload(entries: &[AddrEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(3 + entries.len() * 30);
    write_varint(&mut out, entries.len() as u64);
    for e in entries {
        out.extend_from_slice(&e.last_seen.to_le_bytes());
        out.extend_from_slice(&e.services.to_le_bytes());
        out.extend_from_slice(&ip_to_bytes(e.address));
        out.extend_from_slice(&e.port.to_be_bytes());
    }
    out
}

/// Parses an `addr` payload, preserving entry order.
pub fn parse_addr_payload(raw: &[u8]) -> Result<Vec<AddrEntry>, WireError> {
    let mut r = Reader::new(raw);
    let count = r.varint()?;
    if count > MAX_ADDR_ENTRIES as u64 {
        return Err(WireError::TooManyEntries(count));
    }
    let mut entries = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let entry = (|| {
            let last_seen = r.u32_le()?;
            let services = r.u64_le()?;
            let address = ip_from_bytes(r.array()?);
            let port = r.u16_be()?;
            Ok::<_, WireError>(AddrEntry { address, port, last_seen, services })
        })()
        .map_err(|_| WireError::MalformedEntry(i))?;
        if entry.port == 0 || entry.address.is_unspecified() {
            return Err(WireError::MalformedEntry(i));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Messages the crawler and simulator understand. Anything else decodes as
/// [`Message::Unknown`] so protocol extensions never abort a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Version(VersionInfo),
    Verack,
    GetAddr,
    Addr(Vec<AddrEntry>),
    Ping(u64),
    Pong(u64),
    Unknown { command: Command, payload: Vec<u8> },
}

impl Message {
    pub fn command(&self) -> &str {
        match self {
            Message::Version(_) => "version",
            Message::Verack => "verack",
            Message::GetAddr => "getaddr",
            Message::Addr(_) => "addr",
            Message::Ping(_) => "ping",
            Message::Pong(_) => "pong",
            Message::Unknown { command, .. } => command.as_str(),
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match self {
            Message::Version(v) => v.encode(),
            Message::Verack | Message::GetAddr => Vec::new(),
            Message::Addr(entries) => encode_addr_payload(entries),
            Message::Ping(n) | Message::Pong(n) => n.to_le_bytes().to_vec(),
            Message::Unknown { payload, .. } => payload.clone(),
        }
    }

    pub fn to_wire(&self, magic: Magic) -> WireMessage {
        let payload = self.payload();
        let checksum = super::checksum(&payload);
        let command = match self {
            Message::Unknown { command, .. } => *command,
            // static names are valid commands
            _ => Command::new(self.command()).expect("static command"),
        };
        WireMessage { magic, command, payload, checksum }
    }

    pub fn from_wire(msg: &WireMessage) -> Result<Self, WireError> {
        let nonce = |payload: &[u8], command: &'static str| {
            Reader::new(payload).u64_le().map_err(|_| WireError::MalformedPayload {
                command,
                reason: "missing nonce".to_string(),
            })
        };
        Ok(match msg.command.as_str() {
            "version" => Message::Version(parse_version_payload(&msg.payload)?),
            "verack" => Message::Verack,
            "getaddr" => Message::GetAddr,
            "addr" => Message::Addr(parse_addr_payload(&msg.payload)?),
            "ping" => Message::Ping(nonce(&msg.payload, "ping")?),
            "pong" => Message::Pong(nonce(&msg.payload, "pong")?),
            _ => Message::Unknown { command: msg.command, payload: msg.payload.clone() },
        })
    }
}
