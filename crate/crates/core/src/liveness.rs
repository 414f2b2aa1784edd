//! Liveness probes and the daily "active" fold.
//!
//! Each probe tests an endpoint on its advertised port and on every default
//! port of the network, with up to three kinds of check:
//!
//! * `tcp` - the connection is accepted;
//! * `protocol` - an in-protocol ping is answered correctly;
//! * `crawl` - a full discovery query succeeds.
//!
//! An address is active on a day when any check succeeded at any hour, or
//! when it answered that day's crawl.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::net::{IpAddr, SocketAddr};
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::crawl::{derive_nonce, CrawlSnapshot, DiscoveryStrategy, PeerListRequest, PeerListResponse, QueryError};
use crate::exec::Execution;
use crate::kademlia::wire::{decode_response, encode_request, Request, Response};
use crate::peer::PeerRef;
use crate::profile::{Family, Magic, NetworkProfile};
use crate::scan;
use crate::transport::{Clock, Transport, TransportError};
use crate::wire_bitcoin::{build_version_payload, encode_stream, Frames, Message, WireMessage};

pub const DEFAULT_PROBE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Tcp,
    Protocol,
    Crawl,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::Tcp, ProbeKind::Protocol, ProbeKind::Crawl];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Tcp => "tcp",
            ProbeKind::Protocol => "protocol",
            ProbeKind::Crawl => "crawl",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProbeKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown probe kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeOutcome {
    Responded,
    Timeout,
    Refused,
    WrongProtocol,
}

impl From<&TransportError> for ProbeOutcome {
    fn from(e: &TransportError) -> Self {
        match e {
            TransportError::Refused => ProbeOutcome::Refused,
            TransportError::Timeout | TransportError::Io(_) => ProbeOutcome::Timeout,
        }
    }
}

/// One (kind, port) check of one endpoint in one hour slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Start of the hour slot, seconds since the Unix epoch.
    pub timestamp: i64,
    pub network: String,
    pub address: IpAddr,
    pub port: u16,
    pub kind: ProbeKind,
    pub outcome: ProbeOutcome,
}

impl ProbeResult {
    pub fn date(&self) -> NaiveDate {
        utc_date(self.timestamp)
    }
}

/// UTC calendar date of a Unix timestamp.
pub fn utc_date(timestamp: i64) -> NaiveDate {
    DateTime::from_timestamp(timestamp, 0).expect("timestamp in range").date_naive()
}

pub fn hour_slot(timestamp: i64) -> i64 {
    timestamp - timestamp.rem_euclid(3600)
}

/// Ports tested for an endpoint: advertised first, then the defaults.
pub fn ports_to_test(advertised: u16, profile: &NetworkProfile) -> Vec<u16> {
    let mut ports = vec![advertised];
    for &p in &profile.default_ports {
        if !ports.contains(&p) {
            ports.push(p);
        }
    }
    ports
}

/// Probes endpoints of one network.
pub struct Prober<'a> {
    transport: &'a dyn Transport,
    clock: &'a dyn Clock,
    profile: NetworkProfile,
    crawl_strategy: Option<&'a dyn DiscoveryStrategy>,
    pub timeout: Duration,
}

impl<'a> Prober<'a> {
    pub fn new(transport: &'a dyn Transport, clock: &'a dyn Clock, profile: &NetworkProfile) -> Self {
        Prober { transport, clock, profile: profile.clone(), crawl_strategy: None, timeout: DEFAULT_PROBE_TIMEOUT }
    }

    /// Strategy backing the `crawl` probe kind; without one, crawl probes
    /// report a timeout.
    pub fn with_crawl_strategy(mut self, strategy: &'a dyn DiscoveryStrategy) -> Self {
        self.crawl_strategy = Some(strategy);
        self
    }

    /// One result per (kind, port).
    pub fn probe(&self, endpoint: &PeerRef, kinds: &[ProbeKind]) -> Vec<ProbeResult> {
        let timestamp = hour_slot(self.clock.now());
        let mut out = Vec::new();
        for &kind in kinds {
            for port in ports_to_test(endpoint.addr.port(), &self.profile) {
                let target = SocketAddr::new(endpoint.addr.ip(), port);
                let outcome = match kind {
                    ProbeKind::Tcp => match self.transport.connect(target, self.timeout) {
                        Ok(()) => ProbeOutcome::Responded,
                        Err(e) => ProbeOutcome::from(&e),
                    },
                    ProbeKind::Protocol => self.protocol_ping(target),
                    ProbeKind::Crawl => self.crawl_ping(PeerRef { addr: target, node_id: endpoint.node_id }),
                };
                out.push(ProbeResult {
                    timestamp,
                    network: self.profile.name.clone(),
                    address: target.ip(),
                    port,
                    kind,
                    outcome,
                });
            }
        }
        out
    }

    /// Probes many endpoints; output order follows input order.
    pub fn probe_all(&self, endpoints: &[PeerRef], kinds: &[ProbeKind], execution: Execution) -> Vec<ProbeResult> {
        execution.map(endpoints, |e| self.probe(e, kinds)).into_iter().flatten().collect()
    }

    fn protocol_ping(&self, target: SocketAddr) -> ProbeOutcome {
        let nonce = derive_nonce(target, self.clock.now());
        let request = match self.profile.family {
            Family::Bitcoin => {
                let magic = self.profile.magic.unwrap_or(Magic::BITCOIN);
                let version = build_version_payload(&self.profile, ([0, 0, 0, 0], 0).into(), target, nonce, self.clock.now());
                let mut req = WireMessage::new(magic, "version", version).expect("static command").encode();
                req.extend(encode_stream(magic, &[Message::Verack, Message::Ping(nonce)]));
                req
            }
            Family::Kademlia => {
                let proto = self.profile.protocol_id.clone().unwrap_or_default();
                encode_request(&proto, &Request::Ping(nonce)).expect("short protocol id")
            }
            Family::PeerList => PeerListRequest::Ping { nonce }.encode(),
            Family::Cardano => scan::build_probe(&self.profile, target.port()).expect("cardano probe").payload,
        };
        let reply = match self.transport.exchange(target, &request, self.timeout) {
            Ok(r) => r,
            Err(e) => return ProbeOutcome::from(&e),
        };
        if reply.is_empty() {
            return ProbeOutcome::Timeout;
        }
        let valid = match self.profile.family {
            Family::Bitcoin => {
                let magic = self.profile.magic.unwrap_or(Magic::BITCOIN);
                Frames::new(magic, &reply)
                    .map_while(Result::ok)
                    .any(|f| matches!(Message::from_wire(&f), Ok(Message::Pong(n)) if n == nonce))
            }
            Family::Kademlia => matches!(decode_response(&reply), Ok(Response::Pong(n)) if n == nonce),
            Family::PeerList => matches!(PeerListResponse::decode(&reply), Ok(PeerListResponse::Pong { pong }) if pong == nonce),
            Family::Cardano => scan::classify_response(&self.profile, &reply) == scan::ScanResponseClass::CardanoAccept,
        };
        if valid {
            ProbeOutcome::Responded
        } else {
            ProbeOutcome::WrongProtocol
        }
    }

    fn crawl_ping(&self, target: PeerRef) -> ProbeOutcome {
        let Some(strategy) = self.crawl_strategy else {
            return ProbeOutcome::Timeout;
        };
        match strategy.query(&target, self.timeout) {
            Ok(_) => ProbeOutcome::Responded,
            Err(QueryError::Unreachable(e)) => ProbeOutcome::from(&e),
            Err(QueryError::Silent) => ProbeOutcome::Timeout,
            Err(QueryError::Protocol(_)) => ProbeOutcome::WrongProtocol,
        }
    }
}

/// Active and discovered addresses of one network on one UTC day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyActivity {
    pub network: String,
    pub date: NaiveDate,
    pub active: BTreeSet<IpAddr>,
    pub discovered: BTreeSet<IpAddr>,
    /// Addresses with at least one success per check kind; crawl responders
    /// count under `crawl`.
    pub responded_by_kind: BTreeMap<ProbeKind, BTreeSet<IpAddr>>,
}

impl DailyActivity {
    pub fn empty(network: &str, date: NaiveDate) -> Self {
        DailyActivity {
            network: network.to_string(),
            date,
            active: BTreeSet::new(),
            discovered: BTreeSet::new(),
            responded_by_kind: BTreeMap::new(),
        }
    }

    /// active / discovered, the discovery-hit ratio.
    pub fn ad_ratio(&self) -> f64 {
        if self.discovered.is_empty() {
            0.0
        } else {
            self.active.len() as f64 / self.discovered.len() as f64
        }
    }
}

/// Folds one day of probe results and that day's crawl into activity.
///
/// Results stamped outside `date` are ignored.
pub fn fold_active(network: &str, date: NaiveDate, results: &[ProbeResult], snapshot: Option<&CrawlSnapshot>) -> DailyActivity {
    let mut day = DailyActivity::empty(network, date);
    if let Some(snap) = snapshot {
        day.discovered.extend(snap.discovered_addresses());
        let responders = snap.responder_addresses();
        day.active.extend(responders.iter().copied());
        day.responded_by_kind.entry(ProbeKind::Crawl).or_default().extend(responders);
    }
    for r in results.iter().filter(|r| r.date() == date) {
        day.discovered.insert(r.address);
        if r.outcome == ProbeOutcome::Responded {
            day.active.insert(r.address);
            day.responded_by_kind.entry(r.kind).or_default().insert(r.address);
        }
    }
    day
}

/// Writes results as tab-separated lines:
/// `timestamp network address port kind outcome`.
pub fn write_probe_lines<W: Write>(mut out: W, results: &[ProbeResult]) -> std::io::Result<()> {
    for r in results {
        let outcome = serde_json::to_value(r.outcome).expect("outcome serializes");
        writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", r.timestamp, r.network, r.address, r.port, r.kind, outcome.as_str().unwrap())?;
    }
    Ok(())
}

pub fn read_probe_lines<R: BufRead>(input: R) -> Result<Vec<ProbeResult>, String> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| format!("line {}: bad {what}", n + 1);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        out.push(ProbeResult {
            timestamp: f[0].parse().map_err(|_| bad("timestamp"))?,
            network: f[1].to_string(),
            address: f[2].parse().map_err(|_| bad("address"))?,
            port: f[3].parse().map_err(|_| bad("port"))?,
            kind: f[4].parse().map_err(|_| bad("kind"))?,
            outcome: serde_json::from_value(serde_json::Value::String(f[5].to_string())).map_err(|_| bad("outcome"))?,
        });
    }
    Ok(out)
}
