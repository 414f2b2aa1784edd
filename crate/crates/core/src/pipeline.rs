//! End-to-end measurement run against a simulated network.
//!
//! One simulated day is: crawl at 00:05, probe every discovered endpoint in
//! the configured hour slots, fold, label, seal the day, then apply churn.
//! After the last day the sealed store is analyzed into metric tables and
//! plot-ready series. Nothing reads the wall clock, so a fixed seed gives
//! byte-identical artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use ipnet::IpNet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crawl::{
    crawl, next_bootstrap, BitcoinGetAddr, CrawlConfig, CrawlError, CrawlSnapshot, Discovery, DiscoveryStrategy,
    KademliaEnumerate, PeerListQuery, QueryError, DEFAULT_PARALLELISM, DEFAULT_RECRAWL_SAMPLE,
};
use crate::kademlia::{Dialect, EnumerateOptions, HashFunction, PreimagePool, SharedPreimagePool};
use crate::liveness::{fold_active, utc_date, ProbeKind, Prober};
use crate::metrics::{
    as_shares, churn_series, composition, geo_shares, greedy_coverage, hhi, lower_median, median_composition,
    median_retention, peer_table_stats, table_addresses, uptime_streaks, ChurnPoint, Composition, CoverageCurve,
    DailyActivitySeries, GeoLevel, PeerTableStats,
};
use crate::netlabel::{evidence_from_snapshot, inherit_labels, median_daily_counts, LabelScheme, RuleSet, RuleTables};
use crate::peer::PeerRef;
use crate::profile::{Family, NetworkProfile, PeerListStyle};
use crate::simnet::{ChurnReport, SimConfig, SimError, SimNetwork};
use crate::store::{
    enrich, Category, Continent, EnrichmentDataset, EnrichmentError, EnrichmentRecord, Store, StoreError, StoredDay,
};
use crate::transport::{Clock, Transport};
use crate::Execution;

/// Address the simulated crawler connects from (TEST-NET-1).
pub const DEFAULT_REQUESTER: IpAddr = IpAddr::V4(Ipv4Addr::new(192, 0, 2, 1));

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Crawl(#[from] CrawlError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Label(#[from] crate::netlabel::LabelError),
    #[error(transparent)]
    Enrichment(#[from] EnrichmentError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("family {0:?} has no discovery strategy")]
    UnsupportedFamily(Family),
}

impl PipelineError {
    /// Stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Sim(SimError::InvalidConfig(_)) | PipelineError::Config(_) => "InvalidConfig",
            PipelineError::Sim(SimError::UnknownNetwork(_)) => "UnknownNetwork",
            PipelineError::Sim(SimError::UnsupportedFamily(_)) | PipelineError::UnsupportedFamily(_) => "UnsupportedFamily",
            PipelineError::Crawl(CrawlError::AllBootstrapUnreachable { .. }) => "AllBootstrapUnreachable",
            PipelineError::Crawl(CrawlError::NoBootstrap) => "NoBootstrap",
            PipelineError::Crawl(CrawlError::InvalidConfig(_)) => "InvalidConfig",
            PipelineError::Store(StoreError::DuplicateDay { .. }) => "DuplicateDay",
            PipelineError::Store(StoreError::DuplicateArtifact(_)) => "DuplicateArtifact",
            PipelineError::Store(StoreError::Locked(_)) => "Locked",
            PipelineError::Store(_) => "StoreError",
            PipelineError::Label(crate::netlabel::LabelError::AmbiguousRuleTable { .. }) => "AmbiguousRuleTable",
            PipelineError::Label(_) => "LabelError",
            PipelineError::Enrichment(_) => "EnrichmentError",
            PipelineError::Io { .. } => "IoError",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

// ---- strategies ----

/// Discovery strategy chosen by family.
pub enum AnyStrategy<'a> {
    Bitcoin(BitcoinGetAddr<'a>),
    Kademlia(KademliaEnumerate<'a>),
    PeerList(PeerListQuery<'a>),
}

impl DiscoveryStrategy for AnyStrategy<'_> {
    fn family(&self) -> Family {
        match self {
            AnyStrategy::Bitcoin(s) => s.family(),
            AnyStrategy::Kademlia(s) => s.family(),
            AnyStrategy::PeerList(s) => s.family(),
        }
    }

    fn query(&self, target: &PeerRef, timeout: Duration) -> Result<Discovery, QueryError> {
        match self {
            AnyStrategy::Bitcoin(s) => s.query(target, timeout),
            AnyStrategy::Kademlia(s) => s.query(target, timeout),
            AnyStrategy::PeerList(s) => s.query(target, timeout),
        }
    }
}

/// Preimage pool for hashed Kademlia dialects; `None` elsewhere.
pub fn preimage_pool_for(profile: &NetworkProfile, hash: Option<HashFunction>, seed: u64) -> Option<SharedPreimagePool> {
    let dialect = profile.dialect?;
    let hash = hash.or(dialect.default_hash())?;
    dialect.is_hashed().then(|| {
        SharedPreimagePool::new(PreimagePool::new(hash, dialect.key_len(), seed).with_max_depth(profile.crawl_depth))
    })
}

pub fn strategy_for<'a>(
    profile: &NetworkProfile,
    transport: &'a dyn Transport,
    clock: &'a dyn Clock,
    pool: Option<&'a SharedPreimagePool>,
    sampled_rounds: u32,
) -> Result<AnyStrategy<'a>, PipelineError> {
    Ok(match profile.family {
        Family::Bitcoin => AnyStrategy::Bitcoin(BitcoinGetAddr::new(transport, clock, profile)),
        Family::Kademlia => {
            let mut opts = EnumerateOptions::new(profile.dialect.unwrap_or(Dialect::HashedKeccak));
            opts.depth = profile.crawl_depth;
            opts.protocol_id = profile.protocol_id.clone().unwrap_or_default();
            AnyStrategy::Kademlia(KademliaEnumerate::new(transport, opts, pool))
        }
        Family::PeerList => match profile.peer_list.unwrap_or_default() {
            PeerListStyle::Rpc => AnyStrategy::PeerList(PeerListQuery::rpc(transport)),
            PeerListStyle::Sampled => AnyStrategy::PeerList(PeerListQuery::sampled(transport, sampled_rounds)),
        },
        Family::Cardano => return Err(PipelineError::UnsupportedFamily(Family::Cardano)),
    })
}

// ---- configuration ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrawlSettings {
    pub parallelism: usize,
    pub max_attempts: u32,
    pub attempt_timeout_secs: f64,
    /// Previous-day responders reused as the next day's bootstrap.
    pub bootstrap_sample: usize,
    /// Requests per peer for sampled peer-list networks.
    pub sampled_rounds: u32,
    pub preimage_seed: u64,
}

impl Default for CrawlSettings {
    fn default() -> Self {
        CrawlSettings {
            parallelism: DEFAULT_PARALLELISM,
            max_attempts: 3,
            attempt_timeout_secs: 20.0,
            bootstrap_sample: DEFAULT_RECRAWL_SAMPLE,
            sampled_rounds: 4,
            preimage_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub days: u32,
    /// UTC hour slots probed each day.
    pub probe_hours: Vec<u32>,
    pub probe_kinds: Vec<ProbeKind>,
    pub probe_timeout_secs: f64,
    pub parallel: bool,
    pub requester: IpAddr,
    pub crawl: CrawlSettings,
    /// Enrichment CSV; a synthetic dataset covering the simulated address
    /// space is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enrichment: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_rules: Option<PathBuf>,
    pub sim: SimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            days: 3,
            probe_hours: (0..24).collect(),
            probe_kinds: vec![ProbeKind::Tcp, ProbeKind::Protocol],
            probe_timeout_secs: 5.0,
            parallel: true,
            requester: DEFAULT_REQUESTER,
            crawl: CrawlSettings::default(),
            enrichment: None,
            label_rules: None,
            sim: SimConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.enrichment, &mut cfg.label_rules].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [&cfg.enrichment, &cfg.label_rules].into_iter().flatten() {
            if !p.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.days == 0 {
            return Err(PipelineError::Config("days must be at least 1".into()));
        }
        if let Some(h) = self.probe_hours.iter().find(|h| **h > 23) {
            return Err(PipelineError::Config(format!("probe hour {h} outside 0..=23")));
        }
        self.sim.validate().map_err(PipelineError::Config)
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Enrichment covering the simulated address space: one record per /28 of
/// `10.0.0.0/16`, one per /16 of the rest of `10.0.0.0/8`, plus the IPv6
/// documentation block, drawn from fixed country / AS pools.
pub fn synthetic_enrichment(seed: u64) -> EnrichmentDataset {
    const COUNTRIES: [(&str, Continent, u32); 10] = [
        ("US", Continent::NorthAmerica, 30),
        ("DE", Continent::Europe, 18),
        ("FR", Continent::Europe, 8),
        ("NL", Continent::Europe, 6),
        ("CA", Continent::NorthAmerica, 6),
        ("GB", Continent::Europe, 5),
        ("SG", Continent::Asia, 5),
        ("JP", Continent::Asia, 4),
        ("BR", Continent::SouthAmerica, 2),
        ("AU", Continent::Oceania, 2),
    ];
    const ASNS: [(u32, Category); 8] = [
        (24940, Category::Hosting),
        (16509, Category::Hosting),
        (14061, Category::Hosting),
        (16276, Category::Hosting),
        (7922, Category::Isp),
        (3320, Category::Isp),
        (3215, Category::Isp),
        (64512, Category::Other),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_7269_6368);
    let total: u32 = COUNTRIES.iter().map(|c| c.2).sum();
    let mut records = Vec::new();
    let blocks = (0..4096u32)
        .map(|b| (Ipv4Addr::from(0x0a00_0000 | (b << 4)), 28))
        .chain((1..=255u32).map(|b| (Ipv4Addr::from(0x0a00_0000 | (b << 16)), 16)));
    for (base, len) in blocks {
        let mut pick = rng.gen_range(0..total);
        let (country, continent, _) = *COUNTRIES
            .iter()
            .find(|c| {
                if pick < c.2 {
                    true
                } else {
                    pick -= c.2;
                    false
                }
            })
            .expect("weights cover range");
        let (asn, category) = ASNS[rng.gen_range(0..ASNS.len())];
        records.push(EnrichmentRecord {
            prefix: IpNet::new(IpAddr::V4(base), len).expect("valid prefix"),
            country: country.to_string(),
            continent,
            asn,
            category,
        });
    }
    records.push(EnrichmentRecord {
        prefix: IpNet::new(IpAddr::V6(Ipv6Addr::new(0x2001, 0xdb8, 0, 0, 0, 0, 0, 0)), 32).expect("valid prefix"),
        country: "DE".into(),
        continent: Continent::Europe,
        asn: 24940,
        category: Category::Hosting,
    });
    EnrichmentDataset::new(records).expect("synthetic blocks are disjoint")
}

// ---- per-day run ----

/// Pipeline output for one simulated day, with the matching ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub date: NaiveDate,
    pub crawl_responded: usize,
    pub discovered: usize,
    pub active: usize,
    pub ad_ratio: f64,
    pub truth_alive: usize,
    pub truth_reachable_alive: usize,
    pub truth_table_known: usize,
    /// Active addresses equal the simulator's reachable alive addresses.
    pub active_matches_truth: bool,
    /// Crawl-discovered addresses are all table-known or bootstrap.
    pub discovered_within_truth: bool,
}

pub fn load_rules(cfg: &PipelineConfig) -> Result<RuleSet, PipelineError> {
    let tables = match &cfg.label_rules {
        Some(p) => RuleTables::load(p)?,
        None => RuleTables::defaults(),
    };
    Ok(RuleSet::new(&tables)?)
}

pub fn load_enrichment(cfg: &PipelineConfig) -> Result<EnrichmentDataset, PipelineError> {
    match &cfg.enrichment {
        Some(p) => Ok(EnrichmentDataset::from_csv(fs::File::open(p).map_err(io_err(p))?)?),
        None => Ok(synthetic_enrichment(cfg.sim.seed)),
    }
}

/// Crawl, probe, fold, label and seal the network's current day.
pub fn run_day(
    net: &SimNetwork,
    cfg: &PipelineConfig,
    store: &Store,
    rules: &RuleSet,
    previous: Option<&CrawlSnapshot>,
) -> Result<(CrawlSnapshot, DayReport), PipelineError> {
    let profile = net.profile().clone();
    let exec = cfg.execution();
    let day_start = net.day_start();
    let date = utc_date(day_start);
    let transport = net.transport(cfg.requester);
    let pool = preimage_pool_for(&profile, Some(net.hash_function()), cfg.crawl.preimage_seed);
    let strategy = strategy_for(&profile, &transport, net, pool.as_ref(), cfg.crawl.sampled_rounds)?;

    net.set_time(day_start + 5 * 60);
    let mut bootstrap = match previous {
        Some(prev) => next_bootstrap(prev, cfg.crawl.bootstrap_sample, cfg.sim.seed ^ date.to_string().len() as u64 ^ day_start as u64),
        None => Vec::new(),
    };
    for b in net.bootstrap() {
        if !bootstrap.iter().any(|p| p.addr == b.addr) {
            bootstrap.push(b);
        }
    }
    // the crawler learns addresses from tables and from its own seeds
    let seeded: BTreeSet<IpAddr> = bootstrap.iter().map(|p| p.addr.ip()).collect();
    let crawl_cfg = CrawlConfig {
        max_attempts: cfg.crawl.max_attempts,
        attempt_timeout: Duration::from_secs_f64(cfg.crawl.attempt_timeout_secs),
        parallelism: cfg.crawl.parallelism,
        ..CrawlConfig::new(&profile.name, bootstrap)
    };
    let snapshot = crawl(&crawl_cfg, &strategy, net, exec, None)?;
    store.put_snapshot(date, &snapshot)?;

    let targets: Vec<PeerRef> =
        snapshot.records.values().map(|r| PeerRef { addr: r.endpoint, node_id: r.node_id }).collect();
    let mut prober = Prober::new(&transport, net, &profile).with_crawl_strategy(&strategy);
    prober.timeout = Duration::from_secs_f64(cfg.probe_timeout_secs);
    let mut probes = Vec::new();
    for &hour in &cfg.probe_hours {
        net.set_time(day_start + hour as i64 * 3600 + 30 * 60);
        let results = prober.probe_all(&targets, &cfg.probe_kinds, exec);
        store.put_probes(&profile.name, date, hour, &results)?;
        probes.extend(results);
    }

    let activity = fold_active(&profile.name, date, &probes, Some(&snapshot));
    let labels = match LabelScheme::for_profile(&profile) {
        Some(scheme) => {
            let evidence = evidence_from_snapshot(&snapshot, date);
            rules.label_day(scheme, date, &activity.active, &evidence, exec)
        }
        None => Vec::new(),
    };
    let truth = net.truth_summary();
    let report = DayReport {
        date,
        crawl_responded: snapshot.responded_count(),
        discovered: activity.discovered.len(),
        active: activity.active.len(),
        ad_ratio: activity.ad_ratio(),
        truth_alive: truth.alive,
        truth_reachable_alive: truth.reachable_alive_ips.len(),
        truth_table_known: truth.table_known_ips.len(),
        active_matches_truth: activity.active == truth.reachable_alive_ips,
        discovered_within_truth: snapshot
            .discovered_addresses()
            .iter()
            .all(|ip| truth.table_known_ips.contains(ip) || seeded.contains(ip)),
    };
    store.put_day(&StoredDay {
        network: profile.name.clone(),
        date,
        activity,
        tables: snapshot.tables.clone(),
        labels,
    })?;
    Ok((snapshot, report))
}

// ---- analysis over the sealed store ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub date: NaiveDate,
    pub discovered: usize,
    pub active: usize,
    pub ad_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub as_hhi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peer_tables: Option<PeerTableStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub network: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub days: Vec<DaySummary>,
    pub gaps: Vec<NaiveDate>,
    pub churn: Vec<ChurnPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_retention: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_new_rate: Option<f64>,
    /// `(streak, cumulative fraction)` over the whole range.
    pub streak_cdf: Vec<(u32, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub composition: Option<Composition>,
    /// Continent shares of the last day, descending.
    pub continents: Vec<(String, f64)>,
    /// Country shares of the last day, top nine plus "Other".
    pub countries: Vec<(String, f64)>,
    /// Greedy union of the last day's peer tables.
    pub coverage: CoverageCurve<String>,
    /// Lower-median daily size per label after ±7-day inheritance.
    pub label_medians: BTreeMap<String, usize>,
}

/// Metrics over the sealed days of `network` in `[from, to]`.
pub fn analyze(
    store: &Store,
    network: &str,
    from: NaiveDate,
    to: NaiveDate,
    enrichment: &EnrichmentDataset,
    exec: Execution,
) -> Result<Analysis, PipelineError> {
    let days = store.range(network, from, to)?;
    let series = DailyActivitySeries::from_activities(network, days.iter().map(|d| &d.activity))
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let joined: Vec<_> = exec.map(&days, |d| enrich(&d.activity, enrichment));
    let summaries = days
        .iter()
        .zip(&joined)
        .map(|(d, j)| {
            let tables: Vec<BTreeSet<IpAddr>> = d.tables.values().map(|t| table_addresses(t)).collect();
            DaySummary {
                date: d.date,
                discovered: d.activity.discovered.len(),
                active: d.activity.active.len(),
                ad_ratio: d.activity.ad_ratio(),
                as_hhi: as_shares(j).ok().map(|s| hhi(&s)),
                peer_tables: peer_table_stats(tables.iter(), &d.activity.active),
            }
        })
        .collect();
    let churn = churn_series(&series);
    let new_rates: Vec<f64> = churn.iter().filter_map(|p| p.new_rate).collect();
    let streak_cdf = match (series.days.keys().next(), series.days.keys().next_back()) {
        (Some(a), Some(b)) => uptime_streaks(&series, *a, *b).map(|s| s.cdf).unwrap_or_default(),
        _ => Vec::new(),
    };
    let compositions: Vec<Composition> = days.iter().zip(&joined).map(|(d, j)| composition(&d.activity, j)).collect();
    let (continents, countries, coverage) = match (days.last(), joined.last()) {
        (Some(last), Some(j)) => {
            let tables: BTreeMap<String, BTreeSet<IpAddr>> =
                last.tables.iter().map(|(k, t)| (k.to_string(), table_addresses(t))).collect();
            (
                geo_shares(j, GeoLevel::Continent).groups,
                geo_shares(j, GeoLevel::Country).top_with_other(9),
                greedy_coverage(&tables, &last.activity.active),
            )
        }
        _ => (Vec::new(), Vec::new(), CoverageCurve { order: Vec::new(), coverage: Vec::new() }),
    };
    let mut labels: Vec<_> = days.iter().flat_map(|d| d.labels.iter().cloned()).collect();
    labels = inherit_labels(&labels, crate::netlabel::DEFAULT_WINDOW_DAYS);
    Ok(Analysis {
        network: network.to_string(),
        from,
        to,
        days: summaries,
        gaps: series.gaps(),
        median_retention: median_retention(&churn),
        median_new_rate: lower_median(&new_rates),
        churn,
        streak_cdf,
        composition: median_composition(&compositions),
        continents,
        countries,
        coverage,
        label_medians: median_daily_counts(&labels),
    })
}

// ---- full simulation ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub network: String,
    pub seed: u64,
    pub days: Vec<DayReport>,
    pub churn: Vec<ChurnReport>,
    pub analysis: Analysis,
}

impl SimulationReport {
    /// Every day's active set equalled the simulator's reachable set and
    /// every discovered address was table-known.
    pub fn matches_ground_truth(&self) -> bool {
        self.days.iter().all(|d| d.active_matches_truth && d.discovered_within_truth)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn json(value: &impl Serialize) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the report's machine-readable tables and plot series under `out`.
/// Returns the written paths.
pub fn write_report(report: &SimulationReport, truth: &crate::simnet::GroundTruth, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let a = &report.analysis;
    let files: Vec<(PathBuf, Vec<u8>)> = vec![
        (out.join("report.json"), json(report)),
        (out.join("ground_truth.json"), json(truth)),
        (
            out.join("series/active.csv"),
            csv_bytes(
                &["date", "discovered", "active", "ad_ratio", "truth_reachable_alive"],
                report.days.iter().map(|d| {
                    vec![
                        d.date.to_string(),
                        d.discovered.to_string(),
                        d.active.to_string(),
                        d.ad_ratio.to_string(),
                        d.truth_reachable_alive.to_string(),
                    ]
                }),
            ),
        ),
        (
            out.join("series/retention.csv"),
            csv_bytes(
                &["date", "gap", "retention", "new_rate"],
                a.churn.iter().map(|p| vec![p.date.to_string(), p.gap.to_string(), opt(p.retention), opt(p.new_rate)]),
            ),
        ),
        (
            out.join("series/streak_cdf.csv"),
            csv_bytes(&["streak", "cdf"], a.streak_cdf.iter().map(|(s, f)| vec![s.to_string(), f.to_string()])),
        ),
        (
            out.join("series/coverage.csv"),
            csv_bytes(
                &["rank", "table", "coverage"],
                a.coverage
                    .order
                    .iter()
                    .zip(&a.coverage.coverage)
                    .enumerate()
                    .map(|(i, (t, c))| vec![(i + 1).to_string(), t.clone(), c.to_string()]),
            ),
        ),
    ];
    let mut written = Vec::new();
    for (path, bytes) in files {
        write_file(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

/// Runs the whole pipeline for `cfg.days` simulated days, sealing each day
/// in `store`, and returns the report (not yet written anywhere).
pub fn simulate(
    cfg: &PipelineConfig,
    store: &Store,
    progress: Option<&dyn Fn(&DayReport)>,
) -> Result<(SimulationReport, crate::simnet::GroundTruth), PipelineError> {
    cfg.validate()?;
    simulate_on(SimNetwork::build(cfg.sim.clone())?, cfg, store, progress)
}

/// [`simulate`] over an already built network (e.g. one using an operator
/// profile instead of a built-in one).
pub fn simulate_on(
    mut net: SimNetwork,
    cfg: &PipelineConfig,
    store: &Store,
    progress: Option<&dyn Fn(&DayReport)>,
) -> Result<(SimulationReport, crate::simnet::GroundTruth), PipelineError> {
    let rules = load_rules(cfg)?;
    let enrichment = load_enrichment(cfg)?;
    let network = net.profile().name.clone();
    let mut previous: Option<CrawlSnapshot> = None;
    let mut days = Vec::new();
    let mut churn = Vec::new();
    for day in 0..cfg.days {
        let (snapshot, report) = run_day(&net, cfg, store, &rules, previous.as_ref())?;
        if let Some(p) = progress {
            p(&report);
        }
        days.push(report);
        previous = Some(snapshot);
        if day + 1 < cfg.days {
            churn.push(net.advance_day());
        }
    }
    let (from, to) = (days[0].date, days[days.len() - 1].date);
    let analysis = analyze(store, &network, from, to, &enrichment, cfg.execution())?;
    let report = SimulationReport { network, seed: cfg.sim.seed, days, churn, analysis };
    Ok((report, net.ground_truth()))
}

/// Builds the simulated network and applies churn until its current day is
/// `date`. Deterministic, so single-stage commands can address any day of a
/// scripted run.
pub fn network_at(sim: &SimConfig, profile: Option<NetworkProfile>, date: NaiveDate) -> Result<SimNetwork, PipelineError> {
    let mut net = match profile {
        Some(p) => SimNetwork::build_with_profile(sim.clone(), p)?,
        None => SimNetwork::build(sim.clone())?,
    };
    if date < sim.start_date {
        return Err(PipelineError::Config(format!("{date} precedes the simulation start {}", sim.start_date)));
    }
    while utc_date(net.day_start()) < date {
        net.advance_day();
    }
    Ok(net)
}

/// Writes a one-line-per-day progress record.
pub fn progress_line<W: Write>(mut out: W, r: &DayReport) -> std::io::Result<()> {
    writeln!(
        out,
        "day {} discovered={} active={} ad_ratio={:.4} truth_reachable={}",
        r.date, r.discovered, r.active, r.ad_ratio, r.truth_reachable_alive
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(network: &str) -> PipelineConfig {
        PipelineConfig {
            days: 2,
            probe_hours: vec![0, 12],
            sim: SimConfig { network: network.into(), peer_count: 60, ..SimConfig::default() },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn two_bitcoin_days_match_truth() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let (report, _) = simulate(&small("bitcoin"), &store, None).unwrap();
        assert_eq!(report.days.len(), 2);
        assert!(report.matches_ground_truth(), "{:?}", report.days);
        assert_eq!(store.days("bitcoin").unwrap().len(), 2);
        assert!(report.analysis.median_retention.is_some());
    }

    #[test]
    fn labels_are_sealed_for_bitcoin_cash() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut cfg = small("bitcoin-cash");
        cfg.sim.handshakes = vec![
            crate::simnet::MetaTemplate {
                weight: 3,
                meta: crate::peer::HandshakeMeta { client: Some("/Bitcoin Cash Node:28.0.0/".into()), ..Default::default() },
            },
            crate::simnet::MetaTemplate {
                weight: 1,
                meta: crate::peer::HandshakeMeta { client: Some("/Bitcoin SV:1.1.0/".into()), ..Default::default() },
            },
        ];
        let (report, _) = simulate(&cfg, &store, None).unwrap();
        let m = &report.analysis.label_medians;
        assert!(m["BitcoinCash"] > m["BitcoinSV"]);
    }

    #[test]
    fn kademlia_and_peer_list_pipelines_run() {
        for network in ["ethereum-discv4", "ethereum-discv5", "ripple", "stellar"] {
            let dir = tempfile::tempdir().unwrap();
            let store = Store::open(dir.path()).unwrap();
            let mut cfg = small(network);
            cfg.probe_hours = vec![3];
            let (report, _) = simulate(&cfg, &store, None).unwrap();
            assert!(report.matches_ground_truth(), "{network}: {:?}", report.days);
        }
    }

    #[test]
    fn rerun_into_a_sealed_store_fails() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        simulate(&small("bitcoin"), &store, None).unwrap();
        let err = simulate(&small("bitcoin"), &store, None).unwrap_err();
        assert_eq!(err.kind(), "DuplicateArtifact");
    }

    #[test]
    fn config_parses_with_sim_section() {
        let cfg = PipelineConfig::from_toml("days = 4\nprobe_hours = [0, 6]\n[sim]\nnetwork = \"ripple\"\npeer_count = 10\n").unwrap();
        assert_eq!((cfg.days, cfg.sim.peer_count), (4, 10));
        assert!(PipelineConfig::from_toml("probe_hours = [24]").is_err());
    }
}
