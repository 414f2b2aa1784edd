//! Splitting co-resident networks that share one discovery layer.
//!
//! A Bitcoin Cash (*) crawl mixes Bitcoin Cash, Bitcoin SV and eCash nodes
//! (same magic, different clients); a discv4 crawl mixes every EVM chain; a
//! discv5 crawl mixes consensus-layer chains and testnets. Labels come from
//! handshake evidence through rule tables loaded from configuration, then
//! gaps are filled from a ±window of the same address's own history and from
//! a second discovery layer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::net::IpAddr;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crawl::CrawlSnapshot;
use crate::kademlia::Dialect;
use crate::peer::HandshakeMeta;
use crate::profile::{Family, NetworkProfile};
use crate::Execution;

pub const DEFAULT_RULES: &str = include_str!("../config/labels.toml");
pub const DEFAULT_WINDOW_DAYS: i64 = 7;
pub const NONE_LABEL: &str = "none";
pub const OTHER_LABEL: &str = "other";

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("ambiguous rule table: {key} is claimed by both {first:?} and {second:?}")]
    AmbiguousRuleTable { key: String, first: String, second: String },
    #[error("rule table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("rule table {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("evidence for {0} carries no fields")]
    EmptyEvidence(IpAddr),
    #[error("label line {line}: {reason}")]
    BadLine { line: usize, reason: String },
}

/// Which rule tier produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleFired {
    ForkId,
    ChainId,
    /// Client-string rule (Bitcoin Cash (*) prefixes, discv4 chain-unique clients).
    Client,
    MiscClient,
    ForkDigest,
    WindowInherit,
    CrossDiscovery,
    /// Evidence present but matched no rule: label "other".
    Unmatched,
    None,
}

impl RuleFired {
    fn is_original(self) -> bool {
        !matches!(self, RuleFired::WindowInherit | RuleFired::CrossDiscovery | RuleFired::None)
    }
}

/// Handshake facts observed for one address on one day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvidence {
    pub address: IpAddr,
    pub date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork_digest: Option<String>,
}

impl LabelEvidence {
    pub fn from_meta(address: IpAddr, date: NaiveDate, meta: &HandshakeMeta) -> Result<Self, LabelError> {
        let ev = LabelEvidence {
            address,
            date,
            client: meta.client.clone(),
            protocol_version: meta.protocol_version,
            fork_id: meta.fork_id.clone(),
            chain_id: meta.chain_id,
            fork_digest: meta.fork_digest.clone(),
        };
        ev.validate().map(|_| ev)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        let any = self.client.is_some()
            || self.protocol_version.is_some()
            || self.fork_id.is_some()
            || self.chain_id.is_some()
            || self.fork_digest.is_some();
        if any {
            Ok(())
        } else {
            Err(LabelError::EmptyEvidence(self.address))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkLabel {
    pub address: IpAddr,
    pub date: NaiveDate,
    pub label: String,
    pub rule_fired: RuleFired,
}

impl NetworkLabel {
    pub fn none(address: IpAddr, date: NaiveDate) -> Self {
        NetworkLabel { address, date, label: NONE_LABEL.to_string(), rule_fired: RuleFired::None }
    }

    pub fn is_none(&self) -> bool {
        self.rule_fired == RuleFired::None
    }
}

/// Labeling scheme of a discovery network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScheme {
    BitcoinCash,
    Discv4,
    Discv5,
}

impl LabelScheme {
    /// Scheme for networks known to carry several chains.
    pub fn for_profile(profile: &NetworkProfile) -> Option<LabelScheme> {
        match (profile.family, profile.dialect) {
            (Family::Bitcoin, _) if profile.name.starts_with("bitcoin-cash") || profile.name == "bitcoincash" => {
                Some(LabelScheme::BitcoinCash)
            }
            (Family::Kademlia, Some(Dialect::HashedKeccak)) => Some(LabelScheme::Discv4),
            (Family::Kademlia, Some(Dialect::ExplicitDistance)) => Some(LabelScheme::Discv5),
            _ => None,
        }
    }
}

// ---- rule tables as written in configuration ----

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixRule {
    pub label: String,
    pub prefixes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HexRule {
    pub label: String,
    #[serde(alias = "digests")]
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainIdRule {
    pub label: String,
    pub ids: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BitcoinCashRules {
    pub clients: Vec<PrefixRule>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Discv4Rules {
    pub fork_ids: Vec<HexRule>,
    pub chain_ids: Vec<ChainIdRule>,
    pub clients: Vec<PrefixRule>,
    pub misc_clients: Option<PrefixRule>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Discv5Rules {
    pub digests: Vec<HexRule>,
}

/// Versioned rule tables, as loaded from TOML.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleTables {
    pub version: u32,
    pub bitcoin_cash: BitcoinCashRules,
    pub discv4: Discv4Rules,
    pub discv5: Discv5Rules,
}

impl RuleTables {
    pub fn from_toml(text: &str) -> Result<Self, LabelError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LabelError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn defaults() -> Self {
        Self::from_toml(DEFAULT_RULES).expect("bundled rule table parses")
    }
}

fn normalize_hex(s: &str) -> String {
    s.trim().trim_start_matches("0x").trim_start_matches("0X").to_ascii_lowercase()
}

fn unique_map<'a>(
    rules: impl Iterator<Item = (&'a str, String)>,
    what: &str,
) -> Result<HashMap<String, String>, LabelError> {
    let mut map: HashMap<String, String> = HashMap::new();
    for (label, key) in rules {
        match map.get(&key) {
            Some(first) if first != label => {
                return Err(LabelError::AmbiguousRuleTable {
                    key: format!("{what} {key}"),
                    first: first.clone(),
                    second: label.to_string(),
                })
            }
            _ => {
                map.insert(key, label.to_string());
            }
        }
    }
    Ok(map)
}

/// Compiled rule tables ready for lookups.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub version: u32,
    bch_clients: Vec<(String, String)>,
    fork_ids: HashMap<String, String>,
    /// Chain id -> every label claiming it; only singletons decide.
    chain_ids: HashMap<u64, BTreeSet<String>>,
    discv4_clients: Vec<(String, String)>,
    misc_clients: Option<(String, Vec<String>)>,
    digests: HashMap<String, String>,
}

fn prefix_list(rules: &[PrefixRule]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> =
        rules.iter().flat_map(|r| r.prefixes.iter().map(move |p| (p.to_lowercase(), r.label.clone()))).collect();
    // longest prefix first so "/Bitcoin Cash Node:" wins over "/Bitcoin"
    out.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    out
}

fn match_prefix<'a>(rules: &'a [(String, String)], client: &str) -> Option<&'a str> {
    let lower = client.to_lowercase();
    rules.iter().find(|(p, _)| lower.starts_with(p.as_str())).map(|(_, l)| l.as_str())
}

impl RuleSet {
    pub fn new(tables: &RuleTables) -> Result<Self, LabelError> {
        let fork_ids = unique_map(
            tables.discv4.fork_ids.iter().flat_map(|r| r.ids.iter().map(move |id| (r.label.as_str(), normalize_hex(id)))),
            "fork id",
        )?;
        let digests = unique_map(
            tables.discv5.digests.iter().flat_map(|r| r.ids.iter().map(move |id| (r.label.as_str(), normalize_hex(id)))),
            "fork digest",
        )?;
        let bch_clients = prefix_list(&tables.bitcoin_cash.clients);
        unique_map(bch_clients.iter().map(|(p, l)| (l.as_str(), p.clone())), "client prefix")?;
        let discv4_clients = prefix_list(&tables.discv4.clients);
        unique_map(discv4_clients.iter().map(|(p, l)| (l.as_str(), p.clone())), "client prefix")?;
        let mut chain_ids: HashMap<u64, BTreeSet<String>> = HashMap::new();
        for r in &tables.discv4.chain_ids {
            for id in &r.ids {
                chain_ids.entry(*id).or_default().insert(r.label.clone());
            }
        }
        let misc_clients = tables
            .discv4
            .misc_clients
            .as_ref()
            .map(|r| (r.label.clone(), r.prefixes.iter().map(|p| p.to_lowercase()).collect()));
        Ok(RuleSet { version: tables.version, bch_clients, fork_ids, chain_ids, discv4_clients, misc_clients, digests })
    }

    pub fn defaults() -> Self {
        Self::new(&RuleTables::defaults()).expect("bundled rule table is unambiguous")
    }

    fn labeled(ev: &LabelEvidence, label: &str, rule: RuleFired) -> NetworkLabel {
        NetworkLabel { address: ev.address, date: ev.date, label: label.to_string(), rule_fired: rule }
    }

    fn other(ev: &LabelEvidence) -> NetworkLabel {
        Self::labeled(ev, OTHER_LABEL, RuleFired::Unmatched)
    }

    /// Bitcoin Cash (*): a `version` user agent decides; no user agent means
    /// the address never answered `version`.
    pub fn label_bitcoincash(&self, ev: &LabelEvidence) -> NetworkLabel {
        match &ev.client {
            None => NetworkLabel::none(ev.address, ev.date),
            Some(client) => match match_prefix(&self.bch_clients, client) {
                Some(label) => Self::labeled(ev, label, RuleFired::Client),
                None => Self::other(ev),
            },
        }
    }

    /// discv4: fork id, then a chain id unique to one label, then a
    /// chain-unique client, then the generic Ethereum-client bucket.
    pub fn label_discv4(&self, ev: &LabelEvidence) -> NetworkLabel {
        if let Some(label) = ev.fork_id.as_ref().and_then(|f| self.fork_ids.get(&normalize_hex(f))) {
            return Self::labeled(ev, label, RuleFired::ForkId);
        }
        if let Some(labels) = ev.chain_id.and_then(|c| self.chain_ids.get(&c)) {
            if labels.len() == 1 {
                return Self::labeled(ev, labels.iter().next().expect("one label"), RuleFired::ChainId);
            }
        }
        if let Some(client) = &ev.client {
            if let Some(label) = match_prefix(&self.discv4_clients, client) {
                return Self::labeled(ev, label, RuleFired::Client);
            }
            if let Some((label, prefixes)) = &self.misc_clients {
                let lower = client.to_lowercase();
                if prefixes.iter().any(|p| lower.starts_with(p.as_str())) {
                    return Self::labeled(ev, label, RuleFired::MiscClient);
                }
            }
        }
        if ev.fork_id.is_some() || ev.chain_id.is_some() || ev.client.is_some() {
            Self::other(ev)
        } else {
            NetworkLabel::none(ev.address, ev.date)
        }
    }

    /// discv5: the ENR fork digest names the chain (and the upgrade).
    pub fn label_discv5(&self, ev: &LabelEvidence) -> NetworkLabel {
        match &ev.fork_digest {
            None => NetworkLabel::none(ev.address, ev.date),
            Some(d) => match self.digests.get(&normalize_hex(d)) {
                Some(label) => Self::labeled(ev, label, RuleFired::ForkDigest),
                None => Self::other(ev),
            },
        }
    }

    pub fn label(&self, scheme: LabelScheme, ev: &LabelEvidence) -> NetworkLabel {
        match scheme {
            LabelScheme::BitcoinCash => self.label_bitcoincash(ev),
            LabelScheme::Discv4 => self.label_discv4(ev),
            LabelScheme::Discv5 => self.label_discv5(ev),
        }
    }

    /// One label per address-day: every address in `addresses` gets a
    /// label, `none` where no evidence exists. When an address has several
    /// pieces of evidence the most specific tier wins, then the smallest
    /// label name.
    pub fn label_day(
        &self,
        scheme: LabelScheme,
        date: NaiveDate,
        addresses: &BTreeSet<IpAddr>,
        evidence: &[LabelEvidence],
        exec: Execution,
    ) -> Vec<NetworkLabel> {
        let mut by_addr: BTreeMap<IpAddr, Vec<&LabelEvidence>> = BTreeMap::new();
        for ev in evidence.iter().filter(|e| e.date == date) {
            by_addr.entry(ev.address).or_default().push(ev);
        }
        let addrs: Vec<IpAddr> = addresses.iter().copied().collect();
        exec.map(&addrs, |addr| {
            let Some(evs) = by_addr.get(addr) else { return NetworkLabel::none(*addr, date) };
            evs.iter()
                .map(|ev| self.label(scheme, ev))
                .min_by(|a, b| a.rule_fired.cmp(&b.rule_fired).then_with(|| a.label.cmp(&b.label)))
                .unwrap_or_else(|| NetworkLabel::none(*addr, date))
        })
    }
}

/// Evidence from a crawl's handshake metadata, keyed by responder address.
pub fn evidence_from_snapshot(snapshot: &CrawlSnapshot, date: NaiveDate) -> Vec<LabelEvidence> {
    snapshot
        .metadata
        .iter()
        .filter_map(|(key, meta)| {
            let address = snapshot.records.get(key)?.endpoint.ip();
            LabelEvidence::from_meta(address, date, meta).ok()
        })
        .collect()
}

fn days_between(a: NaiveDate, b: NaiveDate) -> i64 {
    (a - b).num_days().abs()
}

/// Fills `none` address-days from the same address's original labels within
/// ±`window_days`. Any disagreement inside the window leaves the day `none`;
/// labeled days are never touched.
pub fn inherit_labels(labels: &[NetworkLabel], window_days: i64) -> Vec<NetworkLabel> {
    let mut originals: HashMap<IpAddr, Vec<(NaiveDate, &str)>> = HashMap::new();
    for l in labels.iter().filter(|l| l.rule_fired.is_original()) {
        originals.entry(l.address).or_default().push((l.date, l.label.as_str()));
    }
    labels
        .iter()
        .map(|l| {
            if !l.is_none() {
                return l.clone();
            }
            let Some(seen) = originals.get(&l.address) else { return l.clone() };
            let candidates: BTreeSet<&str> =
                seen.iter().filter(|(d, _)| days_between(*d, l.date) <= window_days).map(|(_, s)| *s).collect();
            if candidates.len() == 1 {
                let label = candidates.into_iter().next().expect("one candidate").to_string();
                NetworkLabel { label, rule_fired: RuleFired::WindowInherit, ..l.clone() }
            } else {
                l.clone()
            }
        })
        .collect()
}

/// Labels `none` address-days of series A as `"{target} (from {source})"`
/// when the same address carries `target` in series B within the window.
pub fn cross_discovery_backfill(
    labels_a: &[NetworkLabel],
    labels_b: &[NetworkLabel],
    target_label: &str,
    source_name: &str,
    window_days: i64,
) -> Vec<NetworkLabel> {
    let mut in_b: HashMap<IpAddr, Vec<NaiveDate>> = HashMap::new();
    for l in labels_b.iter().filter(|l| l.label == target_label) {
        in_b.entry(l.address).or_default().push(l.date);
    }
    let provenance = format!("{target_label} (from {source_name})");
    labels_a
        .iter()
        .map(|l| {
            let hit = l.is_none()
                && in_b.get(&l.address).is_some_and(|ds| ds.iter().any(|d| days_between(*d, l.date) <= window_days));
            if hit {
                NetworkLabel { label: provenance.clone(), rule_fired: RuleFired::CrossDiscovery, ..l.clone() }
            } else {
                l.clone()
            }
        })
        .collect()
}

/// Per-day head counts per label.
pub fn daily_counts(labels: &[NetworkLabel]) -> BTreeMap<NaiveDate, BTreeMap<String, usize>> {
    let mut out: BTreeMap<NaiveDate, BTreeMap<String, usize>> = BTreeMap::new();
    for l in labels {
        *out.entry(l.date).or_default().entry(l.label.clone()).or_default() += 1;
    }
    out
}

/// Lower median of each label's daily count; days without the label count
/// as zero.
pub fn median_daily_counts(labels: &[NetworkLabel]) -> BTreeMap<String, usize> {
    let days = daily_counts(labels);
    let names: BTreeSet<String> = days.values().flat_map(|m| m.keys().cloned()).collect();
    names
        .into_iter()
        .map(|name| {
            let mut v: Vec<usize> = days.values().map(|m| m.get(&name).copied().unwrap_or(0)).collect();
            v.sort_unstable();
            let median = v[(v.len() - 1) / 2];
            (name, median)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct LabelLine {
    date: NaiveDate,
    network: String,
    address: IpAddr,
    label: String,
    rule_fired: RuleFired,
}

/// One JSON object per line: date, network, address, label, rule_fired.
pub fn write_label_lines<W: Write>(network: &str, labels: &[NetworkLabel], mut out: W) -> std::io::Result<()> {
    for l in labels {
        let line = LabelLine {
            date: l.date,
            network: network.to_string(),
            address: l.address,
            label: l.label.clone(),
            rule_fired: l.rule_fired,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_label_lines<R: BufRead>(input: R) -> Result<Vec<NetworkLabel>, LabelError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| LabelError::BadLine { line: i + 1, reason: e.to_string() })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let l: LabelLine =
            serde_json::from_str(&line).map_err(|e| LabelError::BadLine { line: i + 1, reason: e.to_string() })?;
        out.push(NetworkLabel { address: l.address, date: l.date, label: l.label, rule_fired: l.rule_fired });
    }
    Ok(out)
}
