//! Deterministic in-process peer network with exposed ground truth.
//!
//! Peers speak one discovery family (Bitcoin `getaddr`, Kademlia FIND_NODE or
//! JSON peer lists) through the [`Transport`](crate::transport::Transport)
//! contract. Every answer is a pure function of the seed, the peer, the
//! requester and the simulated time, so any interleaving of concurrent
//! requests sees the same bytes. Time only moves when asked to; sleeping
//! through the simulated clock is a no-op.
//!
//! Unreachable peers sit in other peers' tables but drop inbound
//! connections, like hosts behind NAT. Decoys are plain TCP services that
//! accept connections and answer in the wrong protocol.

mod config;
mod serve;
mod socket;

pub use config::{
    BitcoinSimParams, ChurnConfig, DecoyConfig, DecoyKind, KademliaSimParams, MetaTemplate, PeerListSimParams, SimConfig,
    Topology,
};
pub use serve::SimTransport;
pub use socket::SocketServer;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kademlia::{logdist, Dialect, HashFunction, NodeId, PeerEntry, RoutingTable, ID_BITS};
use crate::peer::{HandshakeMeta, PeerRef};
use crate::profile::{Family, NetworkProfile};
use crate::transport::Clock;
use crate::wire_bitcoin::AddrEntry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("unknown network profile {0:?}")]
    UnknownNetwork(String),
    #[error("family {0:?} cannot be simulated")]
    UnsupportedFamily(Family),
}

/// Mixes values into one seed (splitmix64 steps).
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

pub(crate) fn ip_seed(ip: IpAddr) -> u64 {
    match ip {
        IpAddr::V4(v4) => u32::from(v4) as u64,
        IpAddr::V6(v6) => {
            let b = u128::from(v6);
            (b as u64) ^ ((b >> 64) as u64).rotate_left(17)
        }
    }
}

fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

const TAG_BUILD: u64 = 1;
const TAG_CHURN: u64 = 2;
pub(crate) const TAG_GETADDR: u64 = 3;
pub(crate) const TAG_SAMPLE: u64 = 4;
pub(crate) const TAG_NONCE: u64 = 5;

#[derive(Debug, Clone)]
pub(crate) enum PeerTable {
    Bitcoin { tried: Vec<SocketAddr>, new: Vec<SocketAddr> },
    Kademlia(RoutingTable),
    PeerList(Vec<SocketAddr>),
}

impl PeerTable {
    fn endpoints(&self) -> Vec<SocketAddr> {
        match self {
            PeerTable::Bitcoin { tried, new } => {
                // first occurrence wins; sort-based so the hot path avoids hashing
                let mut order: Vec<(SocketAddr, usize)> = tried.iter().chain(new).copied().zip(0..).collect();
                order.sort_unstable();
                order.dedup_by(|b, a| a.0 == b.0);
                order.sort_unstable_by_key(|e| e.1);
                order.into_iter().map(|e| e.0).collect()
            }
            PeerTable::Kademlia(t) => t.entries().map(|e| e.endpoint).collect(),
            PeerTable::PeerList(list) => list.clone(),
        }
    }

    /// Raw entries; a Bitcoin address may appear in both tried and new.
    fn for_each_raw(&self, mut f: impl FnMut(SocketAddr)) {
        match self {
            PeerTable::Bitcoin { tried, new } => tried.iter().chain(new).for_each(|a| f(*a)),
            PeerTable::Kademlia(t) => t.entries().for_each(|e| f(e.endpoint)),
            PeerTable::PeerList(list) => list.iter().for_each(|a| f(*a)),
        }
    }

    fn remove(&mut self, addr: SocketAddr, node_id: NodeId) {
        match self {
            PeerTable::Bitcoin { tried, new } => {
                tried.retain(|a| *a != addr);
                new.retain(|a| *a != addr);
            }
            PeerTable::Kademlia(t) => {
                t.remove(&node_id);
            }
            PeerTable::PeerList(list) => list.retain(|a| *a != addr),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimPeer {
    pub index: usize,
    pub endpoint: SocketAddr,
    pub node_id: NodeId,
    pub reachable: bool,
    pub alive: bool,
    pub joined_day: u32,
    pub left_day: Option<u32>,
    pub meta: HandshakeMeta,
    pub latency_ms: u64,
    pub(crate) table: PeerTable,
}

impl SimPeer {
    /// Accepts inbound connections right now.
    pub fn answers(&self) -> bool {
        self.alive && self.reachable
    }

    pub fn table_endpoints(&self) -> Vec<SocketAddr> {
        self.table.endpoints()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoy {
    pub endpoint: SocketAddr,
    pub node_id: NodeId,
    pub kind: DecoyKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Host {
    Peer(usize),
    Decoy(usize),
}

/// Exact joins and leaves applied by one [`SimNetwork::advance_day`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnReport {
    /// Day index after the step.
    pub day: u32,
    pub left: Vec<SocketAddr>,
    pub joined: Vec<SocketAddr>,
    pub alive: usize,
    /// Table entries that point at departed peers.
    pub stale_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthPeer {
    pub endpoint: SocketAddr,
    pub node_id: NodeId,
    pub reachable: bool,
    pub alive: bool,
    pub joined_day: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_day: Option<u32>,
    pub table: Vec<SocketAddr>,
}

/// Everything the simulator knows, for oracle comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub network: String,
    pub day: u32,
    pub time: i64,
    pub bootstrap: Vec<SocketAddr>,
    pub peers: Vec<GroundTruthPeer>,
    pub decoys: Vec<Decoy>,
}

impl GroundTruth {
    /// Alive peers that accept inbound connections.
    pub fn reachable_alive(&self) -> BTreeSet<SocketAddr> {
        self.peers.iter().filter(|p| p.alive && p.reachable).map(|p| p.endpoint).collect()
    }

    /// Every endpoint named in some table, plus the bootstrap set.
    pub fn table_known(&self) -> BTreeSet<SocketAddr> {
        self.peers.iter().flat_map(|p| p.table.iter().copied()).chain(self.bootstrap.iter().copied()).collect()
    }
}

/// Address-level view of the ground truth.
#[derive(Debug, Clone)]
pub struct TruthSummary {
    pub alive: usize,
    pub reachable_alive_ips: BTreeSet<IpAddr>,
    pub table_known_ips: HashSet<IpAddr>,
}

#[derive(Debug, Clone)]
pub(crate) struct CachedAddr {
    pub created: i64,
    pub entries: Vec<AddrEntry>,
}

pub struct SimNetwork {
    pub(crate) config: SimConfig,
    pub(crate) profile: NetworkProfile,
    pub(crate) peers: Vec<SimPeer>,
    pub(crate) decoys: Vec<Decoy>,
    pub(crate) hosts: HashMap<SocketAddr, Host>,
    /// Hosts whose IP answers connection attempts (closed ports refuse).
    pub(crate) live_ips: HashMap<IpAddr, usize>,
    pub(crate) hash: HashFunction,
    pub(crate) dialect: Dialect,
    bootstrap: Vec<SocketAddr>,
    now: AtomicI64,
    day: u32,
    pub(crate) addr_cache: Mutex<HashMap<(usize, IpAddr), CachedAddr>>,
}

impl std::fmt::Debug for SimNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimNetwork")
            .field("network", &self.profile.name)
            .field("peers", &self.peers.len())
            .field("day", &self.day)
            .finish()
    }
}

fn peer_ip(index: usize, v6: bool) -> IpAddr {
    let i = index as u32 + 1;
    if v6 {
        IpAddr::V6(Ipv6Addr::new(0x2001, 0x0db8, 0, 0, 0, 0, (i >> 16) as u16, i as u16))
    } else {
        IpAddr::V4(Ipv4Addr::from(0x0a00_0000 | i))
    }
}

fn decoy_ip(index: usize) -> IpAddr {
    // 198.18.0.0/15, reserved for benchmarking
    IpAddr::V4(Ipv4Addr::from(0xc612_0000 | (index as u32 + 1)))
}

fn random_id(rng: &mut ChaCha8Rng) -> NodeId {
    NodeId::from_bytes(rng.gen())
}

impl SimNetwork {
    /// Builds the network for `config.network` from the built-in profiles.
    pub fn build(config: SimConfig) -> Result<Self, SimError> {
        let profile =
            NetworkProfile::builtin_named(&config.network).ok_or_else(|| SimError::UnknownNetwork(config.network.clone()))?;
        Self::build_with_profile(config, profile)
    }

    pub fn build_with_profile(config: SimConfig, profile: NetworkProfile) -> Result<Self, SimError> {
        config.validate().map_err(SimError::InvalidConfig)?;
        if profile.family == Family::Cardano {
            return Err(SimError::UnsupportedFamily(profile.family));
        }
        let dialect = profile.dialect.unwrap_or(Dialect::HashedKeccak);
        let hash = config.kademlia.hash.or(dialect.default_hash()).unwrap_or(HashFunction::Keccak256);
        let start = config.start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
        let mut net = SimNetwork {
            profile,
            peers: Vec::with_capacity(config.peer_count),
            decoys: Vec::new(),
            hosts: HashMap::new(),
            live_ips: HashMap::new(),
            hash,
            dialect,
            bootstrap: Vec::new(),
            now: AtomicI64::new(start),
            day: 0,
            addr_cache: Mutex::new(HashMap::new()),
            config,
        };
        let mut rng = rng_for(&[net.config.seed, TAG_BUILD]);
        let n = net.config.peer_count;

        // exactly round(f * n) reachable peers, peer 0 always among them
        let reachable_n = ((net.config.reachable_fraction * n as f64).round() as usize).clamp(1, n);
        let mut reachable = vec![false; n];
        reachable[0] = true;
        for i in sample(&mut rng, n - 1, reachable_n - 1) {
            reachable[i + 1] = true;
        }
        let mut ids = HashSet::new();
        for (i, &r) in reachable.iter().enumerate() {
            let peer = net.new_peer(i, r, 0, &mut rng);
            ids.insert(peer.node_id);
            net.register(peer);
        }
        net.build_tables(&mut rng);
        net.build_decoys(&mut rng);
        net.bootstrap = net
            .peers
            .iter()
            .filter(|p| p.reachable)
            .take(net.config.bootstrap_count.max(1))
            .map(|p| p.endpoint)
            .collect();
        net.rebuild_live_ips();
        Ok(net)
    }

    fn new_peer(&self, index: usize, reachable: bool, day: u32, rng: &mut ChaCha8Rng) -> SimPeer {
        let cfg = &self.config;
        let v6 = rng.gen_bool(cfg.ipv6_fraction);
        let default_port = self.profile.default_ports.first().copied().unwrap_or(8333);
        let port = if rng.gen_bool(cfg.nonstandard_port_fraction) { rng.gen_range(10_000..60_000) } else { default_port };
        let node_id = random_id(rng);
        let slow = reachable && rng.gen_bool(cfg.slow_fraction);
        let meta = self.pick_meta(rng);
        let table = match self.profile.family {
            Family::Bitcoin => PeerTable::Bitcoin { tried: Vec::new(), new: Vec::new() },
            Family::Kademlia => PeerTable::Kademlia(RoutingTable::new(node_id, cfg.kademlia.k)),
            _ => PeerTable::PeerList(Vec::new()),
        };
        SimPeer {
            index,
            endpoint: SocketAddr::new(peer_ip(index, v6), port),
            node_id,
            reachable,
            alive: true,
            joined_day: day,
            left_day: None,
            meta,
            latency_ms: if slow { cfg.slow_latency_ms } else { cfg.latency_ms },
            table,
        }
    }

    fn pick_meta(&self, rng: &mut ChaCha8Rng) -> HandshakeMeta {
        let total: u64 = self.config.handshakes.iter().map(|t| t.weight as u64).sum();
        if total == 0 {
            return HandshakeMeta::default();
        }
        let mut pick = rng.gen_range(0..total);
        for t in &self.config.handshakes {
            if pick < t.weight as u64 {
                return t.meta.clone();
            }
            pick -= t.weight as u64;
        }
        unreachable!("weights cover the range")
    }

    fn register(&mut self, peer: SimPeer) {
        self.hosts.insert(peer.endpoint, Host::Peer(peer.index));
        self.peers.push(peer);
    }

    fn rebuild_live_ips(&mut self) {
        self.live_ips.clear();
        for p in self.peers.iter().filter(|p| p.answers()) {
            *self.live_ips.entry(p.endpoint.ip()).or_default() += 1;
        }
        for d in &self.decoys {
            *self.live_ips.entry(d.endpoint.ip()).or_default() += 1;
        }
    }

    fn min_bucket(&self) -> u16 {
        ID_BITS + 1 - self.config.kademlia.buckets
    }

    fn build_tables(&mut self, rng: &mut ChaCha8Rng) {
        let n = self.peers.len();
        let reachable: Vec<usize> = (0..n).filter(|&i| self.peers[i].reachable).collect();
        match self.config.topology {
            Topology::Star => {
                let everyone: Vec<usize> = (1..n).collect();
                self.link(0, &everyone);
                for i in 1..n {
                    self.link(i, &[0]);
                }
            }
            Topology::Random => match self.profile.family {
                Family::Bitcoin => {
                    let p = self.config.bitcoin.clone();
                    for i in 0..n {
                        let tried = sample_excluding(rng, &reachable, p.tried_capacity, i);
                        let all: Vec<usize> = (0..n).collect();
                        let new = sample_excluding(rng, &all, p.new_capacity, i);
                        let ep = |v: Vec<usize>| v.into_iter().map(|j| self.peers[j].endpoint).collect::<Vec<_>>();
                        let (tried, new) = (ep(tried), ep(new));
                        self.peers[i].table = PeerTable::Bitcoin { tried, new };
                    }
                    // every peer sits in at least one reachable peer's table
                    for j in 0..n {
                        let holder = reachable[j % reachable.len()];
                        if holder != j {
                            let ep = self.peers[j].endpoint;
                            if let PeerTable::Bitcoin { tried, new } = &mut self.peers[holder].table {
                                if !tried.contains(&ep) && !new.contains(&ep) {
                                    new.push(ep);
                                }
                            }
                        }
                    }
                }
                Family::Kademlia => {
                    let contacts = self.config.kademlia.contacts;
                    let all: Vec<usize> = (0..n).collect();
                    for i in 0..n {
                        let mut order = sample_excluding(rng, &all, if contacts == 0 { n } else { contacts }, i);
                        // keep insertion order random but reproducible
                        order.sort_by_key(|&j| mix(&[self.config.seed, i as u64, j as u64]));
                        self.link(i, &order);
                    }
                }
                _ => {
                    let c = self.config.peer_list.connections;
                    for i in 0..n {
                        let targets = sample_excluding(rng, &reachable, c, i);
                        for j in targets {
                            self.link(i, &[j]);
                            self.link(j, &[i]);
                        }
                    }
                }
            },
        }
    }

    /// Adds peers `others` to `i`'s table (capacity rules per family).
    fn link(&mut self, i: usize, others: &[usize]) {
        let min_bucket = self.min_bucket();
        let entries: Vec<(SocketAddr, NodeId)> =
            others.iter().filter(|&&j| j != i).map(|&j| (self.peers[j].endpoint, self.peers[j].node_id)).collect();
        match &mut self.peers[i].table {
            PeerTable::Bitcoin { new, .. } => {
                for (ep, _) in entries {
                    if !new.contains(&ep) {
                        new.push(ep);
                    }
                }
            }
            PeerTable::Kademlia(t) => {
                for (endpoint, node_id) in entries {
                    if logdist(t.owner(), &node_id).index() >= min_bucket {
                        t.insert(PeerEntry { node_id, endpoint });
                    }
                }
            }
            PeerTable::PeerList(list) => {
                for (ep, _) in entries {
                    if !list.contains(&ep) {
                        list.push(ep);
                    }
                }
            }
        }
    }

    fn build_decoys(&mut self, rng: &mut ChaCha8Rng) {
        let cfg = self.config.decoys.clone();
        let port = self.profile.default_ports.first().copied().unwrap_or(8333);
        let reachable: Vec<usize> = self.peers.iter().filter(|p| p.reachable).map(|p| p.index).collect();
        for d in 0..cfg.count {
            let kind = if rng.gen_bool(cfg.echo_fraction) { DecoyKind::Echo } else { DecoyKind::Http400 };
            let decoy = Decoy { endpoint: SocketAddr::new(decoy_ip(d), port), node_id: random_id(rng), kind };
            self.hosts.insert(decoy.endpoint, Host::Decoy(d));
            self.decoys.push(decoy);
            if cfg.in_tables {
                for holder in sample_excluding(rng, &reachable, 3, usize::MAX) {
                    match &mut self.peers[holder].table {
                        PeerTable::Bitcoin { new, .. } => new.push(decoy.endpoint),
                        PeerTable::Kademlia(t) => {
                            t.insert(PeerEntry { node_id: decoy.node_id, endpoint: decoy.endpoint });
                        }
                        PeerTable::PeerList(list) => list.push(decoy.endpoint),
                    }
                }
            }
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn profile(&self) -> &NetworkProfile {
        &self.profile
    }

    pub fn peers(&self) -> &[SimPeer] {
        &self.peers
    }

    pub fn decoys(&self) -> &[Decoy] {
        &self.decoys
    }

    /// Hash peers apply to FIND_NODE keys.
    pub fn hash_function(&self) -> HashFunction {
        self.hash
    }

    pub fn dialect(&self) -> Dialect {
        self.dialect
    }

    pub fn peer_at(&self, endpoint: SocketAddr) -> Option<&SimPeer> {
        match self.hosts.get(&endpoint) {
            Some(Host::Peer(i)) => Some(&self.peers[*i]),
            _ => None,
        }
    }

    /// Current bootstrap: the first reachable alive peers, as configured.
    pub fn bootstrap(&self) -> Vec<PeerRef> {
        let alive: Vec<PeerRef> = self
            .bootstrap
            .iter()
            .filter_map(|ep| self.peer_at(*ep))
            .filter(|p| p.answers())
            .map(|p| self.peer_ref(p))
            .collect();
        if !alive.is_empty() {
            return alive;
        }
        self.peers.iter().filter(|p| p.answers()).take(self.config.bootstrap_count.max(1)).map(|p| self.peer_ref(p)).collect()
    }

    fn peer_ref(&self, p: &SimPeer) -> PeerRef {
        match self.profile.family {
            Family::Kademlia => PeerRef::with_id(p.endpoint, p.node_id),
            _ => PeerRef::new(p.endpoint),
        }
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn set_time(&self, timestamp: i64) {
        self.now.store(timestamp, Ordering::SeqCst);
    }

    pub fn advance(&self, by: Duration) {
        self.now.fetch_add(by.as_secs() as i64, Ordering::SeqCst);
    }

    /// 00:00 UTC of the current simulated day.
    pub fn day_start(&self) -> i64 {
        self.config.start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp() + self.day as i64 * 86_400
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            network: self.profile.name.clone(),
            day: self.day,
            time: self.now(),
            bootstrap: self.bootstrap.clone(),
            peers: self
                .peers
                .iter()
                .map(|p| GroundTruthPeer {
                    endpoint: p.endpoint,
                    node_id: p.node_id,
                    reachable: p.reachable,
                    alive: p.alive,
                    joined_day: p.joined_day,
                    left_day: p.left_day,
                    table: p.table.endpoints(),
                })
                .collect(),
            decoys: self.decoys.clone(),
        }
    }

    /// Table entries pointing at departed peers.
    pub fn stale_entries(&self) -> usize {
        let mut total = 0;
        let mut stale = Vec::new();
        for p in self.peers.iter().filter(|p| p.alive) {
            stale.clear();
            p.table.for_each_raw(|ep| {
                if matches!(self.hosts.get(&ep), Some(Host::Peer(j)) if !self.peers[*j].alive) {
                    stale.push(ep);
                }
            });
            stale.sort_unstable();
            stale.dedup();
            total += stale.len();
        }
        total
    }

    /// The parts of [`GroundTruth`] a daily check needs, without
    /// materializing every table.
    pub fn truth_summary(&self) -> TruthSummary {
        let mut known: HashSet<IpAddr> = self.bootstrap.iter().map(SocketAddr::ip).collect();
        for p in &self.peers {
            p.table.for_each_raw(|ep| {
                known.insert(ep.ip());
            });
        }
        TruthSummary {
            alive: self.peers.iter().filter(|p| p.alive).count(),
            reachable_alive_ips: self.peers.iter().filter(|p| p.answers()).map(|p| p.endpoint.ip()).collect(),
            table_known_ips: known,
        }
    }

    /// Applies one day of churn and moves the clock to the next midnight.
    pub fn advance_day(&mut self) -> ChurnReport {
        let cfg = self.config.churn.clone();
        let mut rng = rng_for(&[self.config.seed, TAG_CHURN, self.day as u64]);
        let next_day = self.day + 1;

        let mut left = Vec::new();
        for p in self.peers.iter_mut().filter(|p| p.alive) {
            if rng.gen_bool(cfg.leave_probability) {
                p.alive = false;
                p.left_day = Some(next_day);
                left.push(p.index);
            }
        }
        let departed: Vec<(SocketAddr, NodeId)> = left.iter().map(|&i| (self.peers[i].endpoint, self.peers[i].node_id)).collect();
        let peer_list = self.profile.family == Family::PeerList;
        if cfg.prune_departed || peer_list {
            // peer lists report live connections only
            for p in self.peers.iter_mut() {
                for &(ep, id) in &departed {
                    p.table.remove(ep, id);
                }
            }
        }

        let arrivals = cfg.arrivals.unwrap_or(left.len());
        let mut joined = Vec::new();
        for _ in 0..arrivals {
            let index = self.peers.len();
            let reachable = rng.gen_bool(self.config.reachable_fraction);
            let peer = self.new_peer(index, reachable, next_day, &mut rng);
            self.register(peer);
            self.join(index, cfg.announce_fanout, &mut rng);
            joined.push(index);
        }

        self.day = next_day;
        self.set_time(self.day_start());
        self.addr_cache.lock().expect("cache lock").clear();
        self.rebuild_live_ips();
        ChurnReport {
            day: self.day,
            left: left.iter().map(|&i| self.peers[i].endpoint).collect(),
            joined: joined.iter().map(|&i| self.peers[i].endpoint).collect(),
            alive: self.peers.iter().filter(|p| p.alive).count(),
            stale_entries: self.stale_entries(),
        }
    }

    /// Wires a newly arrived peer into the knowledge graph.
    fn join(&mut self, index: usize, fanout: usize, rng: &mut ChaCha8Rng) {
        let alive: Vec<usize> = self.peers.iter().filter(|p| p.alive && p.index != index).map(|p| p.index).collect();
        let alive_reachable: Vec<usize> = alive.iter().copied().filter(|&i| self.peers[i].reachable).collect();
        if alive.is_empty() {
            return;
        }
        match self.profile.family {
            Family::Bitcoin => {
                let p = self.config.bitcoin.clone();
                let tried = sample_excluding(rng, &alive_reachable, p.tried_capacity, index);
                let new = sample_excluding(rng, &alive, p.new_capacity, index);
                let ep = |v: Vec<usize>| v.into_iter().map(|j| self.peers[j].endpoint).collect::<Vec<_>>();
                let (tried, new) = (ep(tried), ep(new));
                self.peers[index].table = PeerTable::Bitcoin { tried, new };
                let me = self.peers[index].endpoint;
                // the arrival announces itself; full tables evict at random
                for holder in sample_excluding(rng, &alive_reachable, fanout, index) {
                    if let PeerTable::Bitcoin { new, .. } = &mut self.peers[holder].table {
                        if new.len() >= p.new_capacity && !new.is_empty() {
                            let victim = rng.gen_range(0..new.len());
                            new.swap_remove(victim);
                        }
                        new.push(me);
                    }
                }
            }
            Family::Kademlia => {
                let contacts = self.config.kademlia.contacts;
                let want = if contacts == 0 { alive.len() } else { contacts };
                let known = sample_excluding(rng, &alive, want, index);
                self.link(index, &known);
                for j in alive {
                    self.link(j, &[index]);
                }
            }
            _ => {
                let targets = sample_excluding(rng, &alive_reachable, self.config.peer_list.connections, index);
                for j in targets {
                    self.link(index, &[j]);
                    self.link(j, &[index]);
                }
            }
        }
    }
}

impl Clock for SimNetwork {
    fn now(&self) -> i64 {
        self.now.load(Ordering::SeqCst)
    }

    /// Simulated waits cost nothing and do not move the clock: retries
    /// happen "instantly" against the same network state.
    fn sleep(&self, _: Duration) {}
}

/// Up to `k` items of `pool` other than `exclude`, in pool order.
fn sample_excluding(rng: &mut ChaCha8Rng, pool: &[usize], k: usize, exclude: usize) -> Vec<usize> {
    let candidates: Vec<usize> = pool.iter().copied().filter(|&x| x != exclude).collect();
    let k = k.min(candidates.len());
    let mut picked = sample(rng, candidates.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| candidates[i]).collect()
}
