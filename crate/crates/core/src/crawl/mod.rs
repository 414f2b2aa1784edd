//! Breadth-first crawl over a pluggable discovery strategy.
//!
//! The frontier is worked in batches of up to `parallelism` claims. Every
//! claim in a batch runs concurrently (retries included) and the results are
//! merged back in claim order, so a crawl against a deterministic transport
//! produces the same snapshot on every run.

mod peer_list;
mod strategy;

pub use peer_list::{PeerListRequest, PeerListResponse};
pub use strategy::{
    derive_nonce, BitcoinGetAddr, Discovery, DiscoveryStrategy, KademliaEnumerate, PeerListQuery, QueryError,
};

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::kademlia::NodeId;
use crate::peer::{dedupe_key, HandshakeMeta, PeerKey, PeerRef};
use crate::profile::Family;
use crate::transport::Clock;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 10;
pub const DEFAULT_ATTEMPT_TIMEOUT: Duration = Duration::from_secs(20);
pub const DEFAULT_BACKOFF: Duration = Duration::from_secs(1);
pub const DEFAULT_PARALLELISM: usize = 128;
pub const DEFAULT_RECRAWL_SAMPLE: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CrawlError {
    #[error("no bootstrap endpoint responded ({attempted} tried)")]
    AllBootstrapUnreachable { attempted: usize },
    #[error("crawl needs at least one bootstrap endpoint")]
    NoBootstrap,
    #[error("invalid crawl config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlConfig {
    pub network: String,
    pub max_attempts: u32,
    #[serde(with = "duration_secs")]
    pub attempt_timeout: Duration,
    #[serde(with = "duration_secs")]
    pub backoff: Duration,
    pub parallelism: usize,
    pub bootstrap: Vec<PeerRef>,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl CrawlConfig {
    pub fn new(network: &str, bootstrap: Vec<PeerRef>) -> Self {
        CrawlConfig {
            network: network.to_string(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            attempt_timeout: DEFAULT_ATTEMPT_TIMEOUT,
            backoff: DEFAULT_BACKOFF,
            parallelism: DEFAULT_PARALLELISM,
            bootstrap,
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism;
        self
    }

    fn validate(&self) -> Result<(), CrawlError> {
        if self.max_attempts == 0 {
            return Err(CrawlError::InvalidConfig("max_attempts must be at least 1"));
        }
        if self.parallelism == 0 {
            return Err(CrawlError::InvalidConfig("parallelism must be at least 1"));
        }
        if self.bootstrap.is_empty() {
            return Err(CrawlError::NoBootstrap);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Responded,
    DiscoveredOnly,
}

/// One endpoint the crawl learned about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerRecord {
    /// Endpoint as advertised in the table that named it (or bootstrap).
    pub endpoint: SocketAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<NodeId>,
    pub status: RecordStatus,
    /// Port the discovery query was answered on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answered_port: Option<u16>,
    pub attempts: u32,
    /// Hops from the bootstrap set.
    pub hop: u32,
    /// Responder whose table first named this endpoint; `None` for bootstrap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_by: Option<PeerKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
    /// False when only part of the responder's table was read.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub table_complete: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

/// Output of one full crawl.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlSnapshot {
    pub network: String,
    pub family: Family,
    pub started: i64,
    pub finished: i64,
    pub records: BTreeMap<PeerKey, PeerRecord>,
    /// Peer list returned by each responder.
    pub tables: BTreeMap<PeerKey, Vec<PeerRef>>,
    pub metadata: BTreeMap<PeerKey, HandshakeMeta>,
}

impl CrawlSnapshot {
    pub fn responded(&self) -> impl Iterator<Item = (&PeerKey, &PeerRecord)> {
        self.records.iter().filter(|(_, r)| r.status == RecordStatus::Responded)
    }

    pub fn responded_count(&self) -> usize {
        self.responded().count()
    }

    /// Distinct IP addresses of every record.
    pub fn discovered_addresses(&self) -> BTreeSet<IpAddr> {
        self.records.values().map(|r| r.endpoint.ip()).collect()
    }

    pub fn responder_addresses(&self) -> BTreeSet<IpAddr> {
        self.responded().map(|(_, r)| r.endpoint.ip()).collect()
    }

    /// Checks that every table entry has a record and that only responders
    /// carry tables.
    pub fn check_consistency(&self) -> Result<(), String> {
        for (owner, table) in &self.tables {
            match self.records.get(owner) {
                Some(r) if r.status == RecordStatus::Responded => {}
                _ => return Err(format!("table owner {owner} is not a responder")),
            }
            for p in table {
                let key = dedupe_key(self.family, p.addr, p.node_id);
                if !self.records.contains_key(&key) {
                    return Err(format!("{key} appears in {owner}'s table but has no record"));
                }
            }
        }
        Ok(())
    }
}

/// Machine-readable crawl status, emitted after every batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlProgress {
    pub batch: usize,
    pub queued: usize,
    pub attempted: usize,
    pub responded: usize,
    pub discovered: usize,
}

#[derive(Debug, Clone)]
struct Outcome {
    attempts: u32,
    result: Result<Discovery, QueryError>,
}

fn attempt(strategy: &dyn DiscoveryStrategy, clock: &dyn Clock, config: &CrawlConfig, target: &PeerRef) -> Outcome {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let result = strategy.query(target, config.attempt_timeout);
        match &result {
            Err(e) if e.is_retryable() && attempts < config.max_attempts => clock.sleep(config.backoff),
            _ => return Outcome { attempts, result },
        }
    }
}

/// Crawls until the frontier drains.
pub fn crawl(
    config: &CrawlConfig,
    strategy: &dyn DiscoveryStrategy,
    clock: &dyn Clock,
    execution: Execution,
    progress: Option<&dyn Fn(&CrawlProgress)>,
) -> Result<CrawlSnapshot, CrawlError> {
    config.validate()?;
    let family = strategy.family();
    let started = clock.now();
    let mut records: BTreeMap<PeerKey, PeerRecord> = BTreeMap::new();
    let mut tables = BTreeMap::new();
    let mut metadata = BTreeMap::new();
    let mut frontier: VecDeque<(PeerKey, PeerRef)> = VecDeque::new();
    let mut bootstrap_keys = HashSet::new();

    for b in &config.bootstrap {
        let key = dedupe_key(family, b.addr, b.node_id);
        if bootstrap_keys.insert(key) {
            records.insert(key, new_record(*b, 0, None));
            frontier.push_back((key, *b));
        }
    }

    let mut batch_no = 0;
    let mut attempted = 0;
    let mut responded = 0;
    while !frontier.is_empty() {
        let take = frontier.len().min(config.parallelism);
        let batch: Vec<(PeerKey, PeerRef)> = frontier.drain(..take).collect();
        let outcomes = execution.map(&batch, |(_, target)| attempt(strategy, clock, config, target));
        for ((key, target), outcome) in batch.into_iter().zip(outcomes) {
            attempted += 1;
            let hop = records[&key].hop;
            let record = records.get_mut(&key).expect("claimed keys have records");
            record.attempts = outcome.attempts;
            match outcome.result {
                Err(e) => record.last_error = Some(e.to_string()),
                Ok(found) => {
                    responded += 1;
                    record.status = RecordStatus::Responded;
                    record.answered_port = Some(target.addr.port());
                    record.table_complete = found.complete;
                    if record.node_id.is_none() {
                        record.node_id = found.node_id;
                    }
                    if !found.meta.is_empty() {
                        metadata.insert(key, found.meta);
                    }
                    for peer in &found.peers {
                        let pk = dedupe_key(family, peer.addr, peer.node_id);
                        if let std::collections::btree_map::Entry::Vacant(slot) = records.entry(pk) {
                            slot.insert(new_record(*peer, hop + 1, Some(key)));
                            frontier.push_back((pk, *peer));
                        }
                    }
                    tables.insert(key, found.peers);
                }
            }
        }
        batch_no += 1;
        if let Some(report) = progress {
            report(&CrawlProgress {
                batch: batch_no,
                queued: frontier.len(),
                attempted,
                responded,
                discovered: records.len(),
            });
        }
    }

    let any_bootstrap = bootstrap_keys.iter().any(|k| records[k].status == RecordStatus::Responded);
    if !any_bootstrap {
        return Err(CrawlError::AllBootstrapUnreachable { attempted: bootstrap_keys.len() });
    }
    Ok(CrawlSnapshot { network: config.network.clone(), family, started, finished: clock.now(), records, tables, metadata })
}

fn new_record(peer: PeerRef, hop: u32, reported_by: Option<PeerKey>) -> PeerRecord {
    PeerRecord {
        endpoint: peer.addr,
        node_id: peer.node_id,
        status: RecordStatus::DiscoveredOnly,
        answered_port: None,
        attempts: 0,
        hop,
        reported_by,
        last_error: None,
        table_complete: true,
    }
}

/// Bootstrap for the next crawl: a seeded sample of the previous crawl's
/// responders, in key order.
pub fn next_bootstrap(previous: &CrawlSnapshot, sample_size: usize, seed: u64) -> Vec<PeerRef> {
    let responders: Vec<PeerRef> =
        previous.responded().map(|(_, r)| PeerRef { addr: r.endpoint, node_id: r.node_id }).collect();
    if responders.len() <= sample_size {
        return responders;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, responders.len(), sample_size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| responders[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    /// Graph-backed strategy: node `i` knows `graph[i]`; nodes in `dead`
    /// never answer.
    struct Graph {
        graph: HashMap<SocketAddr, Vec<SocketAddr>>,
        dead: HashSet<SocketAddr>,
        calls: Mutex<HashMap<SocketAddr, u32>>,
    }

    impl DiscoveryStrategy for Graph {
        fn family(&self) -> Family {
            Family::Bitcoin
        }

        fn query(&self, target: &PeerRef, _: Duration) -> Result<Discovery, QueryError> {
            *self.calls.lock().unwrap().entry(target.addr).or_default() += 1;
            if self.dead.contains(&target.addr) {
                return Err(QueryError::Unreachable(crate::transport::TransportError::Timeout));
            }
            let peers = self.graph.get(&target.addr).cloned().unwrap_or_default();
            Ok(Discovery { peers: peers.into_iter().map(PeerRef::new).collect(), complete: true, ..Default::default() })
        }
    }

    struct CountingClock(AtomicU32);

    impl Clock for CountingClock {
        fn now(&self) -> i64 {
            0
        }

        fn sleep(&self, _: Duration) {
            self.0.fetch_add(1, Ordering::SeqCst);
        }
    }

    fn ep(i: u16) -> SocketAddr {
        SocketAddr::from(([10, 0, (i >> 8) as u8, i as u8], 8333))
    }

    fn star(leaves: u16, dead: &[u16]) -> Graph {
        let mut graph = HashMap::new();
        graph.insert(ep(0), (1..=leaves).map(ep).collect());
        Graph { graph, dead: dead.iter().map(|&i| ep(i)).collect(), calls: Mutex::new(HashMap::new()) }
    }

    #[test]
    fn single_empty_peer() {
        let g = Graph { graph: HashMap::new(), dead: HashSet::new(), calls: Mutex::new(HashMap::new()) };
        let clock = CountingClock(AtomicU32::new(0));
        let snap = crawl(&CrawlConfig::new("t", vec![PeerRef::new(ep(0))]), &g, &clock, Execution::Sequential, None)
            .unwrap();
        assert_eq!(snap.records.len(), 1);
        assert_eq!(snap.responded_count(), 1);
    }

    #[test]
    fn star_is_fully_discovered() {
        let g = star(99, &[]);
        let clock = CountingClock(AtomicU32::new(0));
        let snap = crawl(&CrawlConfig::new("t", vec![PeerRef::new(ep(0))]), &g, &clock, Execution::Parallel, None)
            .unwrap();
        assert_eq!(snap.records.len(), 100);
        assert_eq!(snap.responded_count(), 100);
        snap.check_consistency().unwrap();
        assert!(g.calls.lock().unwrap().values().all(|&c| c == 1));
    }

    #[test]
    fn dead_endpoints_get_exactly_max_attempts() {
        let g = star(10, &[3, 7]);
        let clock = CountingClock(AtomicU32::new(0));
        let snap = crawl(&CrawlConfig::new("t", vec![PeerRef::new(ep(0))]), &g, &clock, Execution::Sequential, None)
            .unwrap();
        let calls = g.calls.lock().unwrap();
        assert_eq!(calls[&ep(3)], DEFAULT_MAX_ATTEMPTS);
        assert_eq!(calls[&ep(7)], DEFAULT_MAX_ATTEMPTS);
        assert_eq!(snap.records[&PeerKey::Endpoint(ep(3))].status, RecordStatus::DiscoveredOnly);
        // one backoff between consecutive attempts
        assert_eq!(clock.0.load(Ordering::SeqCst), 2 * (DEFAULT_MAX_ATTEMPTS - 1));
    }

    #[test]
    fn unreachable_bootstrap_is_an_error() {
        let g = star(3, &[0]);
        let clock = CountingClock(AtomicU32::new(0));
        let err = crawl(&CrawlConfig::new("t", vec![PeerRef::new(ep(0))]), &g, &clock, Execution::Sequential, None)
            .unwrap_err();
        assert_eq!(err, CrawlError::AllBootstrapUnreachable { attempted: 1 });
    }

    #[test]
    fn parallelism_does_not_change_snapshot_sets() {
        let mut graph = HashMap::new();
        for i in 0..200u16 {
            graph.insert(ep(i), vec![ep((i * 7 + 1) % 200), ep((i * 13 + 5) % 200)]);
        }
        let g = Graph { graph, dead: HashSet::new(), calls: Mutex::new(HashMap::new()) };
        let clock = CountingClock(AtomicU32::new(0));
        let run = |p| {
            let cfg = CrawlConfig::new("t", vec![PeerRef::new(ep(0))]).with_parallelism(p);
            crawl(&cfg, &g, &clock, Execution::Parallel, None).unwrap()
        };
        let a = run(1);
        let b = run(1);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = run(64);
        assert_eq!(a.records.keys().collect::<Vec<_>>(), c.records.keys().collect::<Vec<_>>());
        assert_eq!(a.tables, c.tables);
    }

    #[test]
    fn progress_reports_each_batch() {
        let g = star(20, &[]);
        let clock = CountingClock(AtomicU32::new(0));
        let seen = Mutex::new(Vec::new());
        let report = |p: &CrawlProgress| seen.lock().unwrap().push(*p);
        let cfg = CrawlConfig::new("t", vec![PeerRef::new(ep(0))]).with_parallelism(8);
        crawl(&cfg, &g, &clock, Execution::Sequential, Some(&report)).unwrap();
        let seen = seen.into_inner().unwrap();
        // 1 hub batch, then 20 leaves in batches of 8
        assert_eq!(seen.len(), 4);
        assert_eq!(seen.last().unwrap().responded, 21);
        assert_eq!(seen.last().unwrap().queued, 0);
    }

    #[test]
    fn recrawl_bootstrap_samples_responders() {
        let g = star(300, &[]);
        let clock = CountingClock(AtomicU32::new(0));
        let snap = crawl(&CrawlConfig::new("t", vec![PeerRef::new(ep(0))]), &g, &clock, Execution::Parallel, None)
            .unwrap();
        let a = next_bootstrap(&snap, DEFAULT_RECRAWL_SAMPLE, 1);
        assert_eq!(a.len(), 100);
        assert_eq!(a, next_bootstrap(&snap, DEFAULT_RECRAWL_SAMPLE, 1));
        assert!(a.iter().all(|p| snap.records[&PeerKey::Endpoint(p.addr)].status == RecordStatus::Responded));
    }
}
