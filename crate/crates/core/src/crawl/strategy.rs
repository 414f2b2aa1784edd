use std::net::{Ipv4Addr, SocketAddr};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::peer_list::{PeerListRequest, PeerListResponse};
use crate::kademlia::{enumerate_remote, EnumerateOptions, HelloError, NodeId, SharedPreimagePool};
use crate::peer::{HandshakeMeta, PeerRef};
use crate::profile::{Family, Magic, NetworkProfile};
use crate::transport::{Clock, Transport, TransportError};
use crate::wire_bitcoin::{build_version_payload, encode_stream, Frames, Message, WireMessage};

/// What a successful discovery query produced.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Discovery {
    pub peers: Vec<PeerRef>,
    pub meta: HandshakeMeta,
    /// Id the remote announced about itself, if the protocol has one.
    pub node_id: Option<NodeId>,
    /// False when only part of the remote's table could be read.
    pub complete: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("unreachable: {0}")]
    Unreachable(TransportError),
    #[error("connection accepted but nothing was said")]
    Silent,
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl QueryError {
    /// Only reachability failures are worth another attempt; a remote that
    /// answers in the wrong protocol will keep doing so.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, QueryError::Protocol(_))
    }
}

/// One discovery round-trip against a single remote.
pub trait DiscoveryStrategy: Send + Sync {
    fn family(&self) -> Family;
    fn query(&self, target: &PeerRef, timeout: Duration) -> Result<Discovery, QueryError>;
}

/// Nonce derived from the target and time, so replays against a simulated
/// network are byte-identical.
pub fn derive_nonce(target: SocketAddr, now: i64) -> u64 {
    let ip = match target.ip() {
        std::net::IpAddr::V4(v4) => v4.to_ipv6_mapped().octets(),
        std::net::IpAddr::V6(v6) => v6.octets(),
    };
    let digest = Sha256::new()
        .chain_update(ip)
        .chain_update(target.port().to_be_bytes())
        .chain_update(now.to_le_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn dummy_self() -> SocketAddr {
    SocketAddr::from((Ipv4Addr::UNSPECIFIED, 0))
}

/// `version`, `verack`, `getaddr` pipelined in one request.
pub struct BitcoinGetAddr<'a> {
    transport: &'a dyn Transport,
    clock: &'a dyn Clock,
    magic: Magic,
    profile: NetworkProfile,
    self_endpoint: SocketAddr,
}

impl<'a> BitcoinGetAddr<'a> {
    pub fn new(transport: &'a dyn Transport, clock: &'a dyn Clock, profile: &NetworkProfile) -> Self {
        BitcoinGetAddr {
            transport,
            clock,
            magic: profile.magic.unwrap_or(Magic::BITCOIN),
            profile: profile.clone(),
            self_endpoint: dummy_self(),
        }
    }

    pub fn with_self_endpoint(mut self, endpoint: SocketAddr) -> Self {
        self.self_endpoint = endpoint;
        self
    }
}

impl DiscoveryStrategy for BitcoinGetAddr<'_> {
    fn family(&self) -> Family {
        Family::Bitcoin
    }

    fn query(&self, target: &PeerRef, timeout: Duration) -> Result<Discovery, QueryError> {
        let now = self.clock.now();
        let nonce = derive_nonce(target.addr, now);
        let version = build_version_payload(&self.profile, self.self_endpoint, target.addr, nonce, now);
        let mut request = WireMessage::new(self.magic, "version", version).expect("static command").encode();
        request.extend(encode_stream(self.magic, &[Message::Verack, Message::GetAddr]));
        let reply = self.transport.exchange(target.addr, &request, timeout).map_err(QueryError::Unreachable)?;
        if reply.is_empty() {
            return Err(QueryError::Silent);
        }

        let mut discovery = Discovery { complete: true, ..Default::default() };
        let mut seen_version = false;
        let mut first_error = None;
        for frame in Frames::new(self.magic, &reply) {
            let msg = match frame.and_then(|f| Message::from_wire(&f)) {
                Ok(m) => m,
                Err(e) => {
                    first_error = Some(e);
                    break;
                }
            };
            match msg {
                Message::Version(v) if v.nonce == nonce => {
                    return Err(QueryError::Protocol("remote echoed our own version".into()));
                }
                Message::Version(v) => {
                    seen_version = true;
                    discovery.meta.protocol_version = Some(v.protocol_version as i64);
                    discovery.meta.client = Some(v.user_agent);
                }
                Message::Addr(entries) => discovery.peers.extend(entries.iter().map(|e| PeerRef::new(e.endpoint()))),
                _ => {}
            }
        }
        if !seen_version {
            let reason = first_error.map_or_else(|| "no version message".to_string(), |e| e.to_string());
            return Err(QueryError::Protocol(reason));
        }
        // a frame that broke mid-stream leaves the table partial
        discovery.complete = first_error.is_none();
        let mut seen = std::collections::HashSet::new();
        discovery.peers.retain(|p| seen.insert(p.addr));
        Ok(discovery)
    }
}

/// Hello followed by a bucket-by-bucket table walk.
pub struct KademliaEnumerate<'a> {
    transport: &'a dyn Transport,
    options: EnumerateOptions,
    pool: Option<&'a SharedPreimagePool>,
}

impl<'a> KademliaEnumerate<'a> {
    pub fn new(transport: &'a dyn Transport, options: EnumerateOptions, pool: Option<&'a SharedPreimagePool>) -> Self {
        KademliaEnumerate { transport, options, pool }
    }
}

impl DiscoveryStrategy for KademliaEnumerate<'_> {
    fn family(&self) -> Family {
        Family::Kademlia
    }

    fn query(&self, target: &PeerRef, timeout: Duration) -> Result<Discovery, QueryError> {
        let opts = EnumerateOptions { timeout, ..self.options.clone() };
        let res = enumerate_remote(self.transport, target.addr, &opts, self.pool);
        match res.hello_error {
            Some(HelloError::Transport(t)) => Err(QueryError::Unreachable(t)),
            Some(HelloError::Silent) => Err(QueryError::Silent),
            Some(HelloError::Protocol(p)) => Err(QueryError::Protocol(p)),
            None => Ok(Discovery {
                peers: res.peers.values().map(|e| PeerRef::with_id(e.endpoint, e.node_id)).collect(),
                meta: res.meta,
                node_id: res.node_id,
                complete: res.complete,
            }),
        }
    }
}

/// RPC peer lists and sampled peer caches: one request, one list.
///
/// Sampled networks answer with a different subset each time, so `rounds`
/// repeats the request and unions the answers.
pub struct PeerListQuery<'a> {
    transport: &'a dyn Transport,
    rounds: u32,
}

impl<'a> PeerListQuery<'a> {
    pub fn rpc(transport: &'a dyn Transport) -> Self {
        PeerListQuery { transport, rounds: 1 }
    }

    pub fn sampled(transport: &'a dyn Transport, rounds: u32) -> Self {
        PeerListQuery { transport, rounds: rounds.max(1) }
    }
}

impl DiscoveryStrategy for PeerListQuery<'_> {
    fn family(&self) -> Family {
        Family::PeerList
    }

    fn query(&self, target: &PeerRef, timeout: Duration) -> Result<Discovery, QueryError> {
        let mut discovery = Discovery { complete: true, ..Default::default() };
        let mut seen = std::collections::HashSet::new();
        for round in 0..self.rounds {
            let request = PeerListRequest::Peers { round }.encode();
            let reply = self.transport.exchange(target.addr, &request, timeout).map_err(QueryError::Unreachable)?;
            if reply.is_empty() {
                return Err(QueryError::Silent);
            }
            match PeerListResponse::decode(&reply) {
                Ok(PeerListResponse::Peers { node_id, meta, peers }) => {
                    discovery.node_id = node_id;
                    discovery.meta = meta;
                    discovery.peers.extend(peers.into_iter().filter(|p| seen.insert(p.addr)));
                }
                Ok(PeerListResponse::Pong { .. }) => return Err(QueryError::Protocol("pong to a peers request".into())),
                Err(e) => return Err(QueryError::Protocol(e.to_string())),
            }
        }
        Ok(discovery)
    }
}
