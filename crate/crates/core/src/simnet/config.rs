use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::kademlia::{HashFunction, DEFAULT_K};
use crate::peer::HandshakeMeta;

/// Knowledge graph shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Every peer knows a random subset of the others.
    #[default]
    Random,
    /// Peer 0 knows everyone; everyone else knows only peer 0.
    Star,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BitcoinSimParams {
    /// Addresses of peers the node has connected to (reachable peers only).
    pub tried_capacity: usize,
    /// Addresses the node has merely heard of.
    pub new_capacity: usize,
    /// Share of the table returned per `getaddr`.
    pub getaddr_fraction: f64,
    pub getaddr_max: usize,
}

impl Default for BitcoinSimParams {
    fn default() -> Self {
        BitcoinSimParams { tried_capacity: 64, new_capacity: 256, getaddr_fraction: 0.23, getaddr_max: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KademliaSimParams {
    pub k: usize,
    /// Tables only hold entries in the top `buckets` buckets.
    pub buckets: u16,
    /// Contacts each peer tries to insert; 0 inserts every other peer.
    pub contacts: usize,
    /// Hash peers apply to FIND_NODE keys; defaults to the dialect's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hash: Option<HashFunction>,
}

impl Default for KademliaSimParams {
    fn default() -> Self {
        KademliaSimParams { k: DEFAULT_K, buckets: 16, contacts: 0, hash: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeerListSimParams {
    /// Outbound connections each peer opens to reachable peers.
    pub connections: usize,
    /// Entries in one sampled answer.
    pub sample_size: usize,
}

impl Default for PeerListSimParams {
    fn default() -> Self {
        PeerListSimParams { connections: 16, sample_size: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChurnConfig {
    /// Daily probability that an alive peer leaves.
    pub leave_probability: f64,
    /// Arrivals per day; `None` replaces every departure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrivals: Option<usize>,
    /// Existing peers that learn about each arrival.
    pub announce_fanout: usize,
    /// Remove departed peers from tables instead of leaving stale entries.
    pub prune_departed: bool,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig { leave_probability: 0.0, arrivals: None, announce_fanout: 64, prune_departed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoyKind {
    /// Echoes whatever it receives.
    Echo,
    /// Answers every request with an HTTP 400.
    Http400,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoyConfig {
    pub count: usize,
    /// Share of decoys that echo; the rest speak HTTP.
    pub echo_fraction: f64,
    /// Whether real peers list decoys in their tables.
    pub in_tables: bool,
}

impl Default for DecoyConfig {
    fn default() -> Self {
        DecoyConfig { count: 0, echo_fraction: 0.5, in_tables: true }
    }
}

/// Handshake fields assigned to a weighted share of peers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaTemplate {
    pub weight: u32,
    #[serde(flatten)]
    pub meta: HandshakeMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    /// Name of the network profile the peers speak.
    pub network: String,
    pub peer_count: usize,
    pub reachable_fraction: f64,
    pub ipv6_fraction: f64,
    /// Share of peers listening on a random port instead of the default.
    pub nonstandard_port_fraction: f64,
    /// Reachable peers handed to the first crawl.
    pub bootstrap_count: usize,
    pub topology: Topology,
    pub bitcoin: BitcoinSimParams,
    pub kademlia: KademliaSimParams,
    pub peer_list: PeerListSimParams,
    pub addr_cache_ttl_hours: u32,
    pub churn: ChurnConfig,
    pub decoys: DecoyConfig,
    pub handshakes: Vec<MetaTemplate>,
    pub latency_ms: u64,
    /// Share of reachable peers whose replies take `slow_latency_ms`.
    pub slow_fraction: f64,
    pub slow_latency_ms: u64,
    /// First simulated day (00:00 UTC).
    pub start_date: NaiveDate,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            network: "bitcoin".to_string(),
            peer_count: 100,
            reachable_fraction: 0.5,
            ipv6_fraction: 0.0,
            nonstandard_port_fraction: 0.0,
            bootstrap_count: 3,
            topology: Topology::Random,
            bitcoin: BitcoinSimParams::default(),
            kademlia: KademliaSimParams::default(),
            peer_list: PeerListSimParams::default(),
            addr_cache_ttl_hours: 24,
            churn: ChurnConfig::default(),
            decoys: DecoyConfig::default(),
            handshakes: Vec::new(),
            latency_ms: 40,
            slow_fraction: 0.0,
            slow_latency_ms: 30_000,
            start_date: NaiveDate::from_ymd_opt(2025, 4, 1).expect("valid date"),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.peer_count == 0 {
            return Err("peer_count must be at least 1".into());
        }
        for (name, v) in [
            ("reachable_fraction", self.reachable_fraction),
            ("ipv6_fraction", self.ipv6_fraction),
            ("nonstandard_port_fraction", self.nonstandard_port_fraction),
            ("slow_fraction", self.slow_fraction),
            ("churn.leave_probability", self.churn.leave_probability),
            ("decoys.echo_fraction", self.decoys.echo_fraction),
            ("bitcoin.getaddr_fraction", self.bitcoin.getaddr_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.kademlia.buckets == 0 || self.kademlia.buckets > 256 {
            return Err("kademlia.buckets must lie in 1..=256".into());
        }
        if self.kademlia.k == 0 {
            return Err("kademlia.k must be at least 1".into());
        }
        Ok(())
    }
}
