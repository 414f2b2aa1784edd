//! JSON messages for single-request peer-list discovery (RPC-style peer
//! lists and sampled peer caches).

use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use crate::kademlia::NodeId;
use crate::peer::{HandshakeMeta, PeerRef};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum PeerListRequest {
    /// Ask for the node's peers. `round` distinguishes repeated samples
    /// within one crawl.
    Peers { round: u32 },
    Ping { nonce: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PeerListResponse {
    Peers {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node_id: Option<NodeId>,
        #[serde(default)]
        meta: HandshakeMeta,
        peers: Vec<PeerRef>,
    },
    Pong { pong: u64 },
}

impl PeerListRequest {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }

    pub fn decode(raw: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(raw)
    }
}

impl PeerListResponse {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("response serializes")
    }

    pub fn decode(raw: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(raw)
    }

    pub fn peers(peers: Vec<SocketAddr>, meta: HandshakeMeta) -> Self {
        PeerListResponse::Peers { node_id: None, meta, peers: peers.into_iter().map(PeerRef::new).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_round_trip() {
        for req in [PeerListRequest::Peers { round: 2 }, PeerListRequest::Ping { nonce: 9 }] {
            assert_eq!(PeerListRequest::decode(&req.encode()).unwrap(), req);
        }
        let resp = PeerListResponse::peers(vec!["1.2.3.4:51235".parse().unwrap()], HandshakeMeta::default());
        assert_eq!(PeerListResponse::decode(&resp.encode()).unwrap(), resp);
        let pong = PeerListResponse::Pong { pong: 4 };
        assert_eq!(PeerListResponse::decode(&pong.encode()).unwrap(), pong);
    }

    #[test]
    fn request_wire_shape() {
        assert_eq!(PeerListRequest::Peers { round: 0 }.encode(), br#"{"method":"peers","round":0}"#);
    }
}
