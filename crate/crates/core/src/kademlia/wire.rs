//! Compact request/response codec spoken between the crawler and Kademlia
//! peers over a [`Transport`](crate::transport::Transport).
//!
//! Live discv4/discv5/libp2p packets are out of scope; this codec keeps the
//! discovery semantics (hello, FIND_NODE by key or distance, ping) and their
//! protocol-id separation.
//!
//! ```text
//! request  := tag u8 | proto_len u8 | proto_id | body
//!   0x01 hello              (no body)
//!   0x02 find-node by key   key_len u16be | key
//!   0x03 find-node distance distance u16be
//!   0x04 ping               nonce u64le
//! response := tag u8 | body
//!   0x81 hello reply        node_id[32] | meta_len u32be | meta json
//!   0x82 nodes              count u16be | (node_id[32] | ip | port u16be)*
//!   0x84 pong               nonce u64le
//! ip := 4 addr[4] | 6 addr[16]
//! ```

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};

use thiserror::Error;

use super::{NodeId, PeerEntry};
use crate::peer::HandshakeMeta;

const TAG_HELLO: u8 = 0x01;
const TAG_FIND_KEY: u8 = 0x02;
const TAG_FIND_DISTANCE: u8 = 0x03;
const TAG_PING: u8 = 0x04;
const TAG_HELLO_REPLY: u8 = 0x81;
const TAG_NODES: u8 = 0x82;
const TAG_PONG: u8 = 0x84;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KadWireError {
    #[error("empty message")]
    Empty,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("truncated message")]
    Truncated,
    #[error("trailing bytes after message")]
    Trailing,
    #[error("bad handshake metadata: {0}")]
    BadMeta(String),
    #[error("field too long")]
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Hello,
    FindNodeKey(Vec<u8>),
    FindNodeDistance(u16),
    Ping(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    HelloReply { node_id: NodeId, meta: HandshakeMeta },
    Nodes(Vec<PeerEntry>),
    Pong(u64),
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], KadWireError> {
        if self.0.len() < n {
            return Err(KadWireError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, KadWireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, KadWireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, KadWireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64_le(&mut self) -> Result<u64, KadWireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn node_id(&mut self) -> Result<NodeId, KadWireError> {
        Ok(NodeId::from_bytes(self.take(32)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), KadWireError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(KadWireError::Trailing)
        }
    }
}

pub fn encode_request(protocol_id: &str, request: &Request) -> Result<Vec<u8>, KadWireError> {
    let proto = protocol_id.as_bytes();
    let proto_len = u8::try_from(proto.len()).map_err(|_| KadWireError::TooLong)?;
    let tag = match request {
        Request::Hello => TAG_HELLO,
        Request::FindNodeKey(_) => TAG_FIND_KEY,
        Request::FindNodeDistance(_) => TAG_FIND_DISTANCE,
        Request::Ping(_) => TAG_PING,
    };
    let mut out = vec![tag, proto_len];
    out.extend_from_slice(proto);
    match request {
        Request::Hello => {}
        Request::FindNodeKey(key) => {
            let len = u16::try_from(key.len()).map_err(|_| KadWireError::TooLong)?;
            out.extend_from_slice(&len.to_be_bytes());
            out.extend_from_slice(key);
        }
        Request::FindNodeDistance(d) => out.extend_from_slice(&d.to_be_bytes()),
        Request::Ping(nonce) => out.extend_from_slice(&nonce.to_le_bytes()),
    }
    Ok(out)
}

/// Returns the protocol id and the request.
pub fn decode_request(raw: &[u8]) -> Result<(String, Request), KadWireError> {
    let mut c = Cursor(raw);
    let tag = c.u8().map_err(|_| KadWireError::Empty)?;
    let proto_len = c.u8()? as usize;
    let proto = String::from_utf8_lossy(c.take(proto_len)?).into_owned();
    let request = match tag {
        TAG_HELLO => Request::Hello,
        TAG_FIND_KEY => {
            let len = c.u16()? as usize;
            Request::FindNodeKey(c.take(len)?.to_vec())
        }
        TAG_FIND_DISTANCE => Request::FindNodeDistance(c.u16()?),
        TAG_PING => Request::Ping(c.u64_le()?),
        other => return Err(KadWireError::UnknownTag(other)),
    };
    c.finish()?;
    Ok((proto, request))
}

fn write_endpoint(out: &mut Vec<u8>, addr: SocketAddr) {
    match addr.ip() {
        IpAddr::V4(v4) => {
            out.push(4);
            out.extend_from_slice(&v4.octets());
        }
        IpAddr::V6(v6) => {
            out.push(6);
            out.extend_from_slice(&v6.octets());
        }
    }
    out.extend_from_slice(&addr.port().to_be_bytes());
}

fn read_endpoint(c: &mut Cursor<'_>) -> Result<SocketAddr, KadWireError> {
    let ip = match c.u8()? {
        4 => IpAddr::V4(Ipv4Addr::from(<[u8; 4]>::try_from(c.take(4)?).unwrap())),
        6 => IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(c.take(16)?).unwrap())),
        other => return Err(KadWireError::UnknownTag(other)),
    };
    Ok(SocketAddr::new(ip, c.u16()?))
}

pub fn encode_response(response: &Response) -> Vec<u8> {
    let mut out = Vec::new();
    match response {
        Response::HelloReply { node_id, meta } => {
            out.push(TAG_HELLO_REPLY);
            out.extend_from_slice(node_id.as_bytes());
            let json = serde_json::to_vec(meta).expect("metadata serializes");
            out.extend_from_slice(&(json.len() as u32).to_be_bytes());
            out.extend_from_slice(&json);
        }
        Response::Nodes(entries) => {
            out.push(TAG_NODES);
            let n = entries.len().min(u16::MAX as usize);
            out.extend_from_slice(&(n as u16).to_be_bytes());
            for e in &entries[..n] {
                out.extend_from_slice(e.node_id.as_bytes());
                write_endpoint(&mut out, e.endpoint);
            }
        }
        Response::Pong(nonce) => {
            out.push(TAG_PONG);
            out.extend_from_slice(&nonce.to_le_bytes());
        }
    }
    out
}

pub fn decode_response(raw: &[u8]) -> Result<Response, KadWireError> {
    let mut c = Cursor(raw);
    let response = match c.u8().map_err(|_| KadWireError::Empty)? {
        TAG_HELLO_REPLY => {
            let node_id = c.node_id()?;
            let len = c.u32()? as usize;
            let meta = serde_json::from_slice(c.take(len)?).map_err(|e| KadWireError::BadMeta(e.to_string()))?;
            Response::HelloReply { node_id, meta }
        }
        TAG_NODES => {
            let n = c.u16()? as usize;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let node_id = c.node_id()?;
                entries.push(PeerEntry { node_id, endpoint: read_endpoint(&mut c)? });
            }
            Response::Nodes(entries)
        }
        TAG_PONG => Response::Pong(c.u64_le()?),
        other => return Err(KadWireError::UnknownTag(other)),
    };
    c.finish()?;
    Ok(response)
}
