//! Request handling for simulated peers.

use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use rand::seq::index::sample;
use rand::Rng;

use super::{ip_seed, mix, rng_for, CachedAddr, DecoyKind, Host, PeerTable, SimNetwork, TAG_GETADDR, TAG_NONCE, TAG_SAMPLE};
use crate::crawl::{PeerListRequest, PeerListResponse};
use crate::kademlia::wire::{decode_request, encode_response, Request, Response};
use crate::kademlia::{answer_find_node, FindNodeQuery};
use crate::peer::PeerRef;
use crate::profile::{Family, Magic, PeerListStyle};
use crate::transport::{Clock, Transport, TransportError};
use crate::wire_bitcoin::{encode_stream, AddrEntry, Message, VersionInfo, WireError, WireMessage, NODE_NETWORK};

pub(crate) const HTTP_400: &[u8] = b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n";

const DEFAULT_USER_AGENT: &str = "/Satoshi:27.0.0/";

/// State a Bitcoin-family peer keeps for one inbound connection.
#[derive(Debug, Default)]
pub(crate) struct BitcoinSession {
    got_version: bool,
}

/// [`Transport`] view of a [`SimNetwork`] from one requester address.
///
/// The requester IP matters: Bitcoin peers cache their `getaddr` answer per
/// requesting address.
#[derive(Debug, Clone, Copy)]
pub struct SimTransport<'a> {
    net: &'a SimNetwork,
    requester: IpAddr,
}

impl<'a> SimTransport<'a> {
    pub fn new(net: &'a SimNetwork, requester: IpAddr) -> Self {
        SimTransport { net, requester }
    }
}

impl SimNetwork {
    /// Transport seen by a crawler at `requester`.
    pub fn transport(&self, requester: IpAddr) -> SimTransport<'_> {
        SimTransport::new(self, requester)
    }

    fn route(&self, to: SocketAddr, timeout: Duration) -> Result<Host, TransportError> {
        match self.hosts.get(&to) {
            Some(Host::Peer(i)) => {
                let p = &self.peers[*i];
                if !p.answers() {
                    return Err(TransportError::Timeout);
                }
                if Duration::from_millis(p.latency_ms) > timeout {
                    return Err(TransportError::Timeout);
                }
                Ok(Host::Peer(*i))
            }
            Some(Host::Decoy(d)) => Ok(Host::Decoy(*d)),
            None if self.live_ips.contains_key(&to.ip()) => Err(TransportError::Refused),
            None => Err(TransportError::Timeout),
        }
    }

    /// Whole-request answer of peer `index`.
    fn respond(&self, index: usize, requester: IpAddr, request: &[u8]) -> Vec<u8> {
        match self.profile.family {
            Family::Bitcoin => {
                let mut session = BitcoinSession::default();
                let mut buf = request.to_vec();
                self.bitcoin_feed(index, requester, &mut session, &mut buf)
            }
            Family::Kademlia => self.kademlia_respond(index, request),
            _ => self.peer_list_respond(index, requester, request),
        }
    }

    /// Consumes complete frames from `buf` and returns the reply bytes.
    /// Partial trailing frames stay in `buf`. Wrong-network input is
    /// dropped silently, as real nodes do.
    pub(crate) fn bitcoin_feed(
        &self,
        index: usize,
        requester: IpAddr,
        session: &mut BitcoinSession,
        buf: &mut Vec<u8>,
    ) -> Vec<u8> {
        let magic = self.profile.magic.unwrap_or(Magic::BITCOIN);
        let mut out = Vec::new();
        loop {
            let (frame, used) = match WireMessage::decode_prefix(magic, buf) {
                Ok(ok) => ok,
                Err(WireError::Truncated { .. }) => break,
                Err(_) => {
                    buf.clear();
                    break;
                }
            };
            buf.drain(..used);
            let Ok(msg) = Message::from_wire(&frame) else { continue };
            out.extend(self.bitcoin_message(index, requester, session, msg, magic));
        }
        out
    }

    fn bitcoin_message(
        &self,
        index: usize,
        requester: IpAddr,
        session: &mut BitcoinSession,
        msg: Message,
        magic: Magic,
    ) -> Vec<u8> {
        let peer = &self.peers[index];
        match msg {
            Message::Version(_) => {
                if session.got_version {
                    return Vec::new();
                }
                session.got_version = true;
                let version = VersionInfo {
                    protocol_version: peer.meta.protocol_version.map(|v| v as i32).unwrap_or(self.profile.protocol_version),
                    services: NODE_NETWORK,
                    timestamp: self.now(),
                    receiver: SocketAddr::new(requester, 0),
                    sender: peer.endpoint,
                    nonce: mix(&[self.config.seed, TAG_NONCE, index as u64]),
                    user_agent: peer.meta.client.clone().unwrap_or_else(|| DEFAULT_USER_AGENT.to_string()),
                    start_height: 0,
                    relay: true,
                };
                encode_stream(magic, &[Message::Version(version), Message::Verack])
            }
            Message::GetAddr if session.got_version => {
                encode_stream(magic, &[Message::Addr(self.getaddr(index, requester))])
            }
            Message::Ping(n) if session.got_version => encode_stream(magic, &[Message::Pong(n)]),
            _ => Vec::new(),
        }
    }

    /// The cached `addr` answer peer `index` gives `requester`.
    pub(crate) fn getaddr(&self, index: usize, requester: IpAddr) -> Vec<AddrEntry> {
        let now = self.now();
        let ttl = self.config.addr_cache_ttl_hours as i64 * 3600;
        let mut cache = self.addr_cache.lock().expect("cache lock");
        if let Some(hit) = cache.get(&(index, requester)) {
            if now - hit.created < ttl {
                return hit.entries.clone();
            }
        }
        let entries = self.sample_addr(index, requester, now);
        cache.insert((index, requester), CachedAddr { created: now, entries: entries.clone() });
        entries
    }

    fn sample_addr(&self, index: usize, requester: IpAddr, now: i64) -> Vec<AddrEntry> {
        let PeerTable::Bitcoin { tried, new } = &self.peers[index].table else {
            return Vec::new();
        };
        let mut all: Vec<SocketAddr> = tried.clone();
        for a in new {
            if !tried.contains(a) {
                all.push(*a);
            }
        }
        let p = &self.config.bitcoin;
        let want = ((p.getaddr_fraction * all.len() as f64).ceil() as usize).min(p.getaddr_max).min(all.len());
        let mut rng = rng_for(&[self.config.seed, TAG_GETADDR, index as u64, ip_seed(requester), now as u64]);
        let mut picked = sample(&mut rng, all.len(), want).into_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|i| {
                let age: i64 = rng.gen_range(0..3 * 3600);
                AddrEntry::new(all[i], (now - age).max(0) as u32)
            })
            .collect()
    }

    fn kademlia_respond(&self, index: usize, request: &[u8]) -> Vec<u8> {
        let Ok((proto, req)) = decode_request(request) else { return Vec::new() };
        if proto != self.profile.protocol_id.clone().unwrap_or_default() {
            return Vec::new();
        }
        let peer = &self.peers[index];
        let PeerTable::Kademlia(table) = &peer.table else { return Vec::new() };
        let response = match req {
            Request::Hello => Response::HelloReply { node_id: peer.node_id, meta: peer.meta.clone() },
            Request::FindNodeKey(key) => {
                Response::Nodes(answer_find_node(table, &FindNodeQuery::key(self.dialect, key, self.hash)))
            }
            Request::FindNodeDistance(d) => Response::Nodes(answer_find_node(table, &FindNodeQuery::distance(d))),
            Request::Ping(n) => Response::Pong(n),
        };
        encode_response(&response)
    }

    fn peer_list_respond(&self, index: usize, requester: IpAddr, request: &[u8]) -> Vec<u8> {
        let Ok(req) = PeerListRequest::decode(request) else { return Vec::new() };
        let peer = &self.peers[index];
        let PeerTable::PeerList(list) = &peer.table else { return Vec::new() };
        let response = match req {
            PeerListRequest::Ping { nonce } => PeerListResponse::Pong { pong: nonce },
            PeerListRequest::Peers { round } => {
                let peers = match self.profile.peer_list.unwrap_or_default() {
                    PeerListStyle::Rpc => list.clone(),
                    PeerListStyle::Sampled => {
                        let want = self.config.peer_list.sample_size.min(list.len());
                        let mut rng = rng_for(&[
                            self.config.seed,
                            TAG_SAMPLE,
                            index as u64,
                            ip_seed(requester),
                            self.now() as u64,
                            round as u64,
                        ]);
                        let mut picked = sample(&mut rng, list.len(), want).into_vec();
                        picked.sort_unstable();
                        picked.into_iter().map(|i| list[i]).collect()
                    }
                };
                PeerListResponse::Peers {
                    node_id: None,
                    meta: peer.meta.clone(),
                    peers: peers.into_iter().map(PeerRef::new).collect(),
                }
            }
        };
        response.encode()
    }
}

impl Transport for SimTransport<'_> {
    fn connect(&self, to: SocketAddr, timeout: Duration) -> Result<(), TransportError> {
        self.net.route(to, timeout).map(drop)
    }

    fn exchange(&self, to: SocketAddr, request: &[u8], timeout: Duration) -> Result<Vec<u8>, TransportError> {
        match self.net.route(to, timeout)? {
            Host::Peer(i) => Ok(self.net.respond(i, self.requester, request)),
            Host::Decoy(d) => Ok(match self.net.decoys[d].kind {
                DecoyKind::Echo => request.to_vec(),
                DecoyKind::Http400 => HTTP_400.to_vec(),
            }),
        }
    }
}
