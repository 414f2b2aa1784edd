//! Peer references and handshake metadata shared across modules.

use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::kademlia::NodeId;
use crate::profile::Family;

/// An endpoint as learned from a peer table, optionally with its DHT id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PeerRef {
    pub addr: SocketAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<NodeId>,
}

impl PeerRef {
    pub fn new(addr: SocketAddr) -> Self {
        PeerRef { addr, node_id: None }
    }

    pub fn with_id(addr: SocketAddr, node_id: NodeId) -> Self {
        PeerRef { addr, node_id: Some(node_id) }
    }
}

/// Deduplication key for the crawl frontier.
///
/// Serialized as a string (`ip:port` or `node:<hex>`) so it can key JSON maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PeerKey {
    Endpoint(SocketAddr),
    Node(NodeId),
}

impl fmt::Display for PeerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeerKey::Endpoint(a) => write!(f, "{a}"),
            PeerKey::Node(id) => write!(f, "node:{id}"),
        }
    }
}

impl FromStr for PeerKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("node:") {
            Some(hex) => hex.parse().map(PeerKey::Node),
            None => s.parse().map(PeerKey::Endpoint).map_err(|e| format!("bad peer key {s:?}: {e}")),
        }
    }
}

impl Serialize for PeerKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PeerKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Bitcoin-family peers are keyed on `ip:port`; DHT peers on their node id
/// when one is known.
pub fn dedupe_key(family: Family, addr: SocketAddr, node_id: Option<NodeId>) -> PeerKey {
    match (family, node_id) {
        (Family::Kademlia, Some(id)) => PeerKey::Node(id),
        _ => PeerKey::Endpoint(addr),
    }
}

/// Fields a handshake reveals about the remote (version message, ENR,
/// identify, status).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork_digest: Option<String>,
}

impl HandshakeMeta {
    pub fn is_empty(&self) -> bool {
        self == &HandshakeMeta::default()
    }
}
