//! `p2pscope` — single-shot measurement commands over a sealed day store.
//!
//! Every stage reads its inputs from the store and seals its outputs there,
//! so an operator's scheduler can run the stages independently (crawl once a
//! day, probe every hour, fold after midnight). Any failure prints exactly
//! one `error <Kind>: <message>` line on stderr and exits non-zero.

mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufReader, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use p2pscope::crawl::{crawl, CrawlConfig, CrawlError, CrawlSnapshot};
use p2pscope::liveness::{fold_active, utc_date, ProbeKind, Prober};
use p2pscope::metrics::{overlap_matrix, rounded_percentages};
use p2pscope::netlabel::{
    cross_discovery_backfill, evidence_from_snapshot, inherit_labels, median_daily_counts, write_label_lines,
    LabelError, LabelScheme, RuleSet, RuleTables, DEFAULT_WINDOW_DAYS,
};
use p2pscope::peer::PeerRef;
use p2pscope::pipeline::{
    analyze, network_at, preimage_pool_for, simulate, strategy_for, synthetic_enrichment, write_report, Analysis,
    PipelineConfig, PipelineError, SimulationReport,
};
use p2pscope::profile::ProfileError;
use p2pscope::scan::{classify_capture, parse_capture, scan_report, ScanError};
use p2pscope::simnet::{SimConfig, SimError, SimNetwork};
use p2pscope::store::{EnrichmentDataset, EnrichmentError, Store, StoreError, StoredDay};
use p2pscope::transport::{Clock, SystemClock, TcpTransport, Transport};
use p2pscope::{Execution, Family, NetworkProfile, ProfileConfig};

#[derive(Parser)]
#[command(name = "p2pscope", version, about = "Peer-to-peer network crawler and measurement pipeline")]
struct Cli {
    /// Network profile file; built-in profiles are used when absent.
    #[arg(long, global = true, env = "P2PSCOPE_CONFIG")]
    config: Option<PathBuf>,
    /// Root of the sealed day store.
    #[arg(long, global = true, env = "P2PSCOPE_STORE", default_value = "store")]
    store: PathBuf,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl a network's discovery layer and seal the day's snapshot.
    Crawl {
        network: String,
        /// Day the snapshot belongs to (defaults to today, or the simulated day).
        #[arg(long)]
        date: Option<NaiveDate>,
        /// Crawl an in-process simulated network described by this TOML file.
        #[arg(long)]
        simnet: Option<PathBuf>,
        /// Extra bootstrap endpoints.
        #[arg(long = "bootstrap")]
        bootstrap: Vec<SocketAddr>,
        #[arg(long, default_value_t = 20.0)]
        timeout_secs: f64,
        #[arg(long, default_value_t = 3)]
        max_attempts: u32,
    },
    /// Probe every endpoint of a sealed snapshot and seal the hour's results.
    Probe {
        network: String,
        date: NaiveDate,
        /// Hour slots to probe; live probing defaults to the current hour.
        #[arg(long = "hour")]
        hours: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "tcp,protocol")]
        kinds: Vec<ProbeKind>,
        #[arg(long)]
        simnet: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        timeout_secs: f64,
    },
    /// Fold a day's probes into its active set, label it and seal the day.
    Fold { network: String, date: NaiveDate },
    /// Emit window-inherited network labels over a date range.
    Label {
        network: String,
        /// `YYYY-MM-DD` or `YYYY-MM-DD..YYYY-MM-DD`.
        range: String,
        #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS)]
        window: i64,
        /// Back-fill unlabeled addresses from another network's labels.
        #[arg(long, requires = "backfill_label")]
        backfill_from: Option<String>,
        /// Label of the other network that is back-filled.
        #[arg(long)]
        backfill_label: Option<String>,
        /// Write label lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute a metric over sealed days and emit tables and plot series.
    Analyze {
        metric: Metric,
        range: String,
        /// Network(s) to analyze; `overlap` takes several.
        #[arg(long = "network", required = true)]
        networks: Vec<String>,
        /// Enrichment CSV (prefix,country,continent,asn,category).
        #[arg(long)]
        enrichment: Option<PathBuf>,
        /// Directory for `<metric>.json`, `.csv` and `.svg`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify an Internet-scan capture file against a network profile.
    ScanClassify {
        network: String,
        capture: PathBuf,
        /// Compare valid responders with this sealed day's crawl view.
        #[arg(long)]
        date: Option<NaiveDate>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Build a simulated network and run the whole pipeline against it.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
        /// Only build the network and write its ground truth.
        #[arg(long)]
        build_only: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    All,
    AdRatio,
    Retention,
    Streaks,
    Hhi,
    Geo,
    Composition,
    PeerTables,
    Coverage,
    Overlap,
    Labels,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Table,
    Json,
}

/// Error kind with a stable name for the machine-readable error line.
fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<CrawlError>() {
            return match e {
                CrawlError::AllBootstrapUnreachable { .. } => "AllBootstrapUnreachable",
                CrawlError::NoBootstrap => "NoBootstrap",
                CrawlError::InvalidConfig(_) => "InvalidConfig",
            };
        }
        if let Some(e) = cause.downcast_ref::<StoreError>() {
            return match e {
                StoreError::DuplicateDay { .. } => "DuplicateDay",
                StoreError::DuplicateArtifact(_) => "DuplicateArtifact",
                StoreError::Locked(_) => "Locked",
                StoreError::Corrupt { .. } => "CorruptArtifact",
                StoreError::BadNetwork(_) => "BadNetwork",
                StoreError::Io { .. } => "IoError",
            };
        }
        if let Some(e) = cause.downcast_ref::<ProfileError>() {
            return match e {
                ProfileError::UnknownNetwork(_) => "UnknownNetwork",
                ProfileError::Io { .. } => "IoError",
                _ => "InvalidConfig",
            };
        }
        if let Some(e) = cause.downcast_ref::<LabelError>() {
            return match e {
                LabelError::AmbiguousRuleTable { .. } => "AmbiguousRuleTable",
                _ => "LabelError",
            };
        }
        if let Some(e) = cause.downcast_ref::<ScanError>() {
            return match e {
                ScanError::UnsupportedFamily(_) => "UnsupportedFamily",
                ScanError::BadCapture { .. } => "BadCapture",
            };
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::UnknownNetwork(_) => "UnknownNetwork",
                SimError::UnsupportedFamily(_) => "UnsupportedFamily",
                SimError::InvalidConfig(_) => "InvalidConfig",
            };
        }
        if cause.downcast_ref::<EnrichmentError>().is_some() {
            return "EnrichmentError";
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.0;
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return "IoError";
        }
    }
    "Error"
}

/// Failure raised by the CLI itself.
#[derive(Debug)]
struct CliError(&'static str, String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for CliError {}

fn fail(kind: &'static str, msg: impl Into<String>) -> anyhow::Error {
    CliError(kind, msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error {}: {}", error_kind(&e), msg);
            ExitCode::FAILURE
        }
    }
}

struct Env {
    profiles: ProfileConfig,
    store_root: PathBuf,
    exec: Execution,
}

impl Env {
    fn profile(&self, name: &str) -> Result<NetworkProfile> {
        Ok(self.profiles.get(name)?.clone())
    }

    fn store(&self) -> Result<Store> {
        Ok(Store::open(&self.store_root)?)
    }

    fn rules(&self, profile: &NetworkProfile) -> Result<RuleSet> {
        let tables = match &profile.label_rules {
            Some(p) => RuleTables::load(p)?,
            None => RuleTables::defaults(),
        };
        Ok(RuleSet::new(&tables)?)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let profiles = match &cli.config {
        Some(p) => ProfileConfig::load(p)?,
        None => ProfileConfig::builtin(),
    };
    let env = Env {
        profiles,
        store_root: cli.store.clone(),
        exec: if cli.sequential { Execution::Sequential } else { Execution::Parallel },
    };
    match &cli.command {
        Command::Crawl { network, date, simnet, bootstrap, timeout_secs, max_attempts } => {
            cmd_crawl(&env, network, *date, simnet.as_deref(), bootstrap, *timeout_secs, *max_attempts)
        }
        Command::Probe { network, date, hours, kinds, simnet, timeout_secs } => {
            cmd_probe(&env, network, *date, hours, kinds, simnet.as_deref(), *timeout_secs)
        }
        Command::Fold { network, date } => cmd_fold(&env, network, *date),
        Command::Label { network, range, window, backfill_from, backfill_label, out } => cmd_label(
            &env,
            network,
            parse_range(range)?,
            *window,
            backfill_from.as_deref().zip(backfill_label.as_deref()),
            out.as_deref(),
        ),
        Command::Analyze { metric, range, networks, enrichment, out } => {
            cmd_analyze(&env, *metric, parse_range(range)?, networks, enrichment.as_deref(), out.as_deref())
        }
        Command::ScanClassify { network, capture, date, format } => cmd_scan(&env, network, capture, *date, *format),
        Command::Simulate { config, out, build_only } => cmd_simulate(cli, &env, config, out, *build_only),
    }
}

fn parse_range(s: &str) -> Result<(NaiveDate, NaiveDate)> {
    let parse = |d: &str| d.trim().parse::<NaiveDate>().map_err(|e| fail("InvalidArgument", format!("date {d:?}: {e}")));
    let (from, to) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => (parse(s)?, parse(s)?),
    };
    if from > to {
        return Err(fail("InvalidArgument", format!("range {s:?} is reversed")));
    }
    Ok((from, to))
}

fn load_sim(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let cfg = SimConfig::from_toml(&text).map_err(|e| fail("InvalidConfig", format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| fail("InvalidConfig", e))?;
    Ok(cfg)
}

/// Simulated network at `date` (or its first day), using the profile file's
/// description of the network when it has one.
fn sim_network(env: &Env, network: &str, path: &Path, date: Option<NaiveDate>) -> Result<SimNetwork> {
    let mut sim = load_sim(path)?;
    sim.network = network.to_string();
    let profile = env.profiles.get(network).ok().cloned();
    let date = date.unwrap_or(sim.start_date);
    Ok(network_at(&sim, profile, date)?)
}

const SIM_REQUESTER: IpAddr = p2pscope::pipeline::DEFAULT_REQUESTER;

fn live_transport(profile: &NetworkProfile) -> Result<TcpTransport> {
    match (profile.family, profile.magic) {
        (Family::Bitcoin, Some(magic)) => Ok(TcpTransport::new(magic)),
        (family, _) => Err(fail(
            "UnsupportedFamily",
            format!("no live transport for the {family:?} family; use --simnet"),
        )),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn crawl_with(
    env: &Env,
    profile: &NetworkProfile,
    transport: &dyn Transport,
    clock: &dyn Clock,
    bootstrap: Vec<PeerRef>,
    timeout_secs: f64,
    max_attempts: u32,
) -> Result<CrawlSnapshot> {
    let pool = preimage_pool_for(profile, None, 7);
    let strategy = strategy_for(profile, transport, clock, pool.as_ref(), 4)?;
    let cfg = CrawlConfig {
        max_attempts,
        attempt_timeout: Duration::from_secs_f64(timeout_secs),
        ..CrawlConfig::new(&profile.name, bootstrap)
    };
    let progress = |p: &p2pscope::crawl::CrawlProgress| {
        eprintln!("crawl {} attempted={} responded={} queued={}", profile.name, p.attempted, p.responded, p.queued);
    };
    Ok(crawl(&cfg, &strategy, clock, env.exec, Some(&progress))?)
}

fn cmd_crawl(
    env: &Env,
    network: &str,
    date: Option<NaiveDate>,
    simnet: Option<&Path>,
    extra: &[SocketAddr],
    timeout_secs: f64,
    max_attempts: u32,
) -> Result<()> {
    let profile = env.profile(network).or_else(|_| {
        NetworkProfile::builtin_named(network).ok_or_else(|| anyhow!(ProfileError::UnknownNetwork(network.into())))
    })?;
    let store = env.store()?;
    let extra: Vec<PeerRef> = extra.iter().map(|a| PeerRef::new(*a)).collect();
    let (snapshot, date) = match simnet {
        Some(path) => {
            let net = sim_network(env, network, path, date)?;
            net.set_time(net.day_start() + 5 * 60);
            let date = utc_date(net.day_start());
            let mut bootstrap = net.bootstrap();
            bootstrap.extend(extra);
            let transport = net.transport(SIM_REQUESTER);
            let pool = preimage_pool_for(&profile, Some(net.hash_function()), 7);
            let strategy = strategy_for(net.profile(), &transport, &net, pool.as_ref(), 4)?;
            let cfg = CrawlConfig {
                max_attempts,
                attempt_timeout: Duration::from_secs_f64(timeout_secs),
                ..CrawlConfig::new(&profile.name, bootstrap)
            };
            (crawl(&cfg, &strategy, &net, env.exec, None)?, date)
        }
        None => {
            let transport = live_transport(&profile)?;
            let mut bootstrap: Vec<PeerRef> = profile.bootstrap.iter().map(|a| PeerRef::new(*a)).collect();
            bootstrap.extend(extra);
            let clock = SystemClock;
            let date = date.unwrap_or_else(|| utc_date(clock.now()));
            (crawl_with(env, &profile, &transport, &clock, bootstrap, timeout_secs, max_attempts)?, date)
        }
    };
    let path = store.put_snapshot(date, &snapshot)?;
    print_json(&serde_json::json!({
        "network": network,
        "date": date,
        "responded": snapshot.responded_count(),
        "discovered": snapshot.discovered_addresses().len(),
        "snapshot": path,
    }))
}

fn cmd_probe(
    env: &Env,
    network: &str,
    date: NaiveDate,
    hours: &[u32],
    kinds: &[ProbeKind],
    simnet: Option<&Path>,
    timeout_secs: f64,
) -> Result<()> {
    let profile = env.profile(network)?;
    let store = env.store()?;
    let snapshot = store
        .get_snapshot(network, date)?
        .ok_or_else(|| fail("MissingArtifact", format!("no sealed snapshot for {network} {date}")))?;
    let targets: Vec<PeerRef> =
        snapshot.records.values().map(|r| PeerRef { addr: r.endpoint, node_id: r.node_id }).collect();
    if let Some(h) = hours.iter().find(|h| **h > 23) {
        return Err(fail("InvalidArgument", format!("hour {h} outside 0..=23")));
    }
    let mut written = Vec::new();
    match simnet {
        Some(path) => {
            let net = sim_network(env, network, path, Some(date))?;
            let transport = net.transport(SIM_REQUESTER);
            let pool = preimage_pool_for(&profile, Some(net.hash_function()), 7);
            let strategy = strategy_for(net.profile(), &transport, &net, pool.as_ref(), 4)?;
            let mut prober = Prober::new(&transport, &net, net.profile()).with_crawl_strategy(&strategy);
            prober.timeout = Duration::from_secs_f64(timeout_secs);
            let hours: Vec<u32> = if hours.is_empty() { vec![0] } else { hours.to_vec() };
            for hour in hours {
                net.set_time(net.day_start() + hour as i64 * 3600 + 30 * 60);
                let results = prober.probe_all(&targets, kinds, env.exec);
                written.push((hour, results.len(), store.put_probes(network, date, hour, &results)?));
            }
        }
        None => {
            let transport = live_transport(&profile)?;
            let clock = SystemClock;
            let now = clock.now();
            if utc_date(now) != date {
                return Err(fail("InvalidArgument", format!("live probes can only be taken for today ({})", utc_date(now))));
            }
            let hour = ((now.rem_euclid(86_400)) / 3600) as u32;
            if !hours.is_empty() && hours != [hour] {
                return Err(fail("InvalidArgument", format!("live probes can only fill the current hour ({hour})")));
            }
            let pool = preimage_pool_for(&profile, None, 7);
            let strategy = strategy_for(&profile, &transport, &clock, pool.as_ref(), 4)?;
            let mut prober = Prober::new(&transport, &clock, &profile).with_crawl_strategy(&strategy);
            prober.timeout = Duration::from_secs_f64(timeout_secs);
            let results = prober.probe_all(&targets, kinds, env.exec);
            written.push((hour, results.len(), store.put_probes(network, date, hour, &results)?));
        }
    }
    for (hour, n, path) in written {
        print_json(&serde_json::json!({"network": network, "date": date, "hour": hour, "results": n, "probes": path}))?;
    }
    Ok(())
}

fn cmd_fold(env: &Env, network: &str, date: NaiveDate) -> Result<()> {
    let profile = env.profile(network)?;
    let store = env.store()?;
    let snapshot = store.get_snapshot(network, date)?;
    let probes = store.get_probes(network, date)?;
    if snapshot.is_none() && probes.is_empty() {
        return Err(fail("MissingArtifact", format!("nothing sealed for {network} {date}")));
    }
    let activity = fold_active(network, date, &probes, snapshot.as_ref());
    let labels = match (LabelScheme::for_profile(&profile), &snapshot) {
        (Some(scheme), Some(snap)) => {
            let evidence = evidence_from_snapshot(snap, date);
            env.rules(&profile)?.label_day(scheme, date, &activity.active, &evidence, env.exec)
        }
        _ => Vec::new(),
    };
    let summary = serde_json::json!({
        "network": network,
        "date": date,
        "discovered": activity.discovered.len(),
        "active": activity.active.len(),
        "ad_ratio": activity.ad_ratio(),
        "labels": labels.len(),
    });
    store.put_day(&StoredDay {
        network: network.to_string(),
        date,
        tables: snapshot.map(|s| s.tables).unwrap_or_default(),
        activity,
        labels,
    })?;
    print_json(&summary)
}

fn range_labels(store: &Store, network: &str, (from, to): (NaiveDate, NaiveDate)) -> Result<Vec<p2pscope::netlabel::NetworkLabel>> {
    let days = store.range(network, from, to)?;
    if days.is_empty() {
        return Err(fail("MissingArtifact", format!("no sealed days for {network} in {from}..{to}")));
    }
    Ok(days.into_iter().flat_map(|d| d.labels).collect())
}

fn cmd_label(
    env: &Env,
    network: &str,
    range: (NaiveDate, NaiveDate),
    window: i64,
    backfill: Option<(&str, &str)>,
    out: Option<&Path>,
) -> Result<()> {
    let store = env.store()?;
    let mut labels = inherit_labels(&range_labels(&store, network, range)?, window);
    if let Some((source, target)) = backfill {
        let other = inherit_labels(&range_labels(&store, source, range)?, window);
        labels = cross_discovery_backfill(&labels, &other, target, source, window);
    }
    match out {
        Some(path) => {
            let mut buf = Vec::new();
            write_label_lines(network, &labels, &mut buf)?;
            write_atomic(path, &buf)?;
        }
        None => write_label_lines(network, &labels, io::stdout().lock())?,
    }
    let medians = median_daily_counts(&labels);
    eprintln!("labels {network} medians {}", serde_json::to_string(&medians)?);
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| tmp.display().to_string())?;
    fs::rename(&tmp, path).with_context(|| path.display().to_string())?;
    Ok(())
}

fn load_enrichment(path: Option<&Path>) -> Result<EnrichmentDataset> {
    match path {
        Some(p) => Ok(EnrichmentDataset::from_csv(fs::File::open(p).with_context(|| p.display().to_string())?)?),
        None => Ok(synthetic_enrichment(0)),
    }
}

/// Emitted artifacts of one analysis: JSON table, optional CSV series and SVG.
struct Emitted {
    json: serde_json::Value,
    csv: Option<(Vec<&'static str>, Vec<Vec<String>>)>,
    svg: Option<String>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn date_x(a: &Analysis, d: NaiveDate) -> f64 {
    (d - a.from).num_days() as f64
}

fn emit_metric(metric: Metric, a: &Analysis) -> Result<Emitted> {
    use plot::{bar_chart, line_chart, Series};
    let name = a.network.as_str();
    Ok(match metric {
        Metric::AdRatio => Emitted {
            json: serde_json::json!({"metric": "ad-ratio", "network": name,
                "days": a.days.iter().map(|d| serde_json::json!({"date": d.date, "discovered": d.discovered, "active": d.active, "ad_ratio": d.ad_ratio})).collect::<Vec<_>>()}),
            csv: Some((
                vec!["date", "discovered", "active", "ad_ratio"],
                a.days.iter().map(|d| vec![d.date.to_string(), d.discovered.to_string(), d.active.to_string(), d.ad_ratio.to_string()]).collect(),
            )),
            svg: Some(line_chart(&format!("{name} A/D ratio"), "day", "A/D", &[Series {
                name,
                points: a.days.iter().map(|d| (date_x(a, d.date), d.ad_ratio)).collect(),
            }])),
        },
        Metric::Retention => Emitted {
            json: serde_json::json!({"metric": "retention", "network": name, "median_retention": a.median_retention,
                "median_new_rate": a.median_new_rate, "gaps": a.gaps, "points": a.churn}),
            csv: Some((
                vec!["date", "gap", "retention", "new_rate"],
                a.churn.iter().map(|p| vec![p.date.to_string(), p.gap.to_string(), cell(p.retention), cell(p.new_rate)]).collect(),
            )),
            svg: Some(line_chart(&format!("{name} daily retention"), "day", "fraction", &[
                Series { name: "retention", points: a.churn.iter().filter_map(|p| Some((date_x(a, p.date), p.retention?))).collect() },
                Series { name: "new", points: a.churn.iter().filter_map(|p| Some((date_x(a, p.date), p.new_rate?))).collect() },
            ])),
        },
        Metric::Streaks => Emitted {
            json: serde_json::json!({"metric": "streaks", "network": name, "cdf": a.streak_cdf}),
            csv: Some((vec!["streak", "cdf"], a.streak_cdf.iter().map(|(s, f)| vec![s.to_string(), f.to_string()]).collect())),
            svg: Some(line_chart(&format!("{name} uptime streak CDF"), "consecutive days", "CDF", &[Series {
                name,
                points: a.streak_cdf.iter().map(|(s, f)| (*s as f64, *f)).collect(),
            }])),
        },
        Metric::Hhi => Emitted {
            json: serde_json::json!({"metric": "hhi", "network": name,
                "days": a.days.iter().map(|d| serde_json::json!({"date": d.date, "hhi": d.as_hhi})).collect::<Vec<_>>()}),
            csv: Some((vec!["date", "hhi"], a.days.iter().map(|d| vec![d.date.to_string(), cell(d.as_hhi)]).collect())),
            svg: Some(line_chart(&format!("{name} AS concentration"), "day", "HHI", &[Series {
                name,
                points: a.days.iter().filter_map(|d| Some((date_x(a, d.date), d.as_hhi?))).collect(),
            }])),
        },
        Metric::Geo => {
            let pct = rounded_percentages(&a.countries);
            Emitted {
                json: serde_json::json!({"metric": "geo", "network": name, "continents": rounded_percentages(&a.continents), "countries": pct}),
                csv: Some((vec!["country", "percent"], pct.iter().map(|(c, p)| vec![c.clone(), p.to_string()]).collect())),
                svg: Some(bar_chart(&format!("{name} countries"), "% of active", &pct)),
            }
        }
        Metric::Composition => Emitted {
            json: serde_json::json!({"metric": "composition", "network": name, "median": a.composition}),
            csv: None,
            svg: None,
        },
        Metric::PeerTables => Emitted {
            json: serde_json::json!({"metric": "peer-tables", "network": name,
                "days": a.days.iter().map(|d| serde_json::json!({"date": d.date, "stats": d.peer_tables})).collect::<Vec<_>>()}),
            csv: Some((
                vec!["date", "responders", "table_size", "active_in_table", "prop_active", "prop_covered"],
                a.days
                    .iter()
                    .filter_map(|d| {
                        let s = d.peer_tables.as_ref()?;
                        Some(vec![
                            d.date.to_string(),
                            s.responders.to_string(),
                            s.table_size.to_string(),
                            s.active_in_table.to_string(),
                            s.prop_active.to_string(),
                            s.prop_covered.to_string(),
                        ])
                    })
                    .collect(),
            )),
            svg: None,
        },
        Metric::Coverage => Emitted {
            json: serde_json::json!({"metric": "coverage", "network": name, "curve": a.coverage}),
            csv: Some((
                vec!["rank", "table", "coverage"],
                a.coverage.order.iter().zip(&a.coverage.coverage).enumerate().map(|(i, (t, c))| vec![(i + 1).to_string(), t.clone(), c.to_string()]).collect(),
            )),
            svg: Some(line_chart(&format!("{name} greedy peer-table coverage"), "tables", "coverage", &[Series {
                name,
                points: a.coverage.coverage.iter().enumerate().map(|(i, c)| ((i + 1) as f64, *c)).collect(),
            }])),
        },
        Metric::Labels => Emitted {
            json: serde_json::json!({"metric": "labels", "network": name, "median_daily": a.label_medians}),
            csv: Some((vec!["label", "median_daily"], a.label_medians.iter().map(|(l, n)| vec![l.clone(), n.to_string()]).collect())),
            svg: None,
        },
        Metric::All => Emitted { json: serde_json::to_value(a)?, csv: None, svg: None },
        Metric::Overlap => unreachable!("overlap spans networks"),
    })
}

fn write_emitted(out: &Path, stem: &str, e: &Emitted) -> Result<()> {
    write_atomic(&out.join(format!("{stem}.json")), format!("{}\n", serde_json::to_string_pretty(&e.json)?).as_bytes())?;
    if let Some((header, rows)) = &e.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        write_atomic(&out.join(format!("{stem}.csv")), &w.into_inner().map_err(|e| anyhow!("{e}"))?)?;
    }
    if let Some(svg) = &e.svg {
        write_atomic(&out.join(format!("{stem}.svg")), svg.as_bytes())?;
    }
    Ok(())
}

fn cmd_analyze(
    env: &Env,
    metric: Metric,
    (from, to): (NaiveDate, NaiveDate),
    networks: &[String],
    enrichment: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let store = env.store()?;
    if metric == Metric::Overlap {
        let mut per_day: BTreeMap<String, BTreeMap<NaiveDate, BTreeSet<IpAddr>>> = BTreeMap::new();
        for n in networks {
            let days = store.range(n, from, to)?;
            per_day.insert(n.clone(), days.into_iter().map(|d| (d.date, d.activity.active)).collect());
        }
        let common = per_day
            .values()
            .map(|m| m.keys().copied().collect::<BTreeSet<_>>())
            .reduce(|a, b| a.intersection(&b).copied().collect())
            .unwrap_or_default();
        let date = *common
            .iter()
            .next_back()
            .ok_or_else(|| fail("MissingArtifact", "the networks share no sealed day in range"))?;
        let sets: BTreeMap<String, BTreeSet<IpAddr>> = per_day.into_iter().map(|(n, mut d)| (n, d.remove(&date).unwrap())).collect();
        let m = overlap_matrix(&sets);
        let mut header = vec!["network"];
        header.extend(m.names.iter().map(|s| s.as_str()));
        let emitted = Emitted {
            json: serde_json::json!({"metric": "overlap", "date": date, "matrix": m}),
            csv: None,
            svg: None,
        };
        print_json(&emitted.json)?;
        if let Some(out) = out {
            write_emitted(out, "overlap", &emitted)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header)?;
            for (name, row) in m.names.iter().zip(&m.cells) {
                let mut r = vec![name.clone()];
                r.extend(row.iter().map(|c| c.to_string()));
                w.write_record(&r)?;
            }
            write_atomic(&out.join("overlap.csv"), &w.into_inner().map_err(|e| anyhow!("{e}"))?)?;
        }
        return Ok(());
    }
    let dataset = load_enrichment(enrichment)?;
    for n in networks {
        let analysis = analyze(&store, n, from, to, &dataset, env.exec)?;
        if analysis.days.is_empty() {
            return Err(fail("MissingArtifact", format!("no sealed days for {n} in {from}..{to}")));
        }
        let emitted = emit_metric(metric, &analysis)?;
        print_json(&emitted.json)?;
        if let Some(out) = out {
            let stem = if networks.len() > 1 { format!("{n}-{}", metric_name(metric)) } else { metric_name(metric).to_string() };
            write_emitted(out, &stem, &emitted)?;
        }
    }
    Ok(())
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::All => "all",
        Metric::AdRatio => "ad-ratio",
        Metric::Retention => "retention",
        Metric::Streaks => "streaks",
        Metric::Hhi => "hhi",
        Metric::Geo => "geo",
        Metric::Composition => "composition",
        Metric::PeerTables => "peer-tables",
        Metric::Coverage => "coverage",
        Metric::Overlap => "overlap",
        Metric::Labels => "labels",
    }
}

fn cmd_scan(env: &Env, network: &str, capture: &Path, date: Option<NaiveDate>, format: Format) -> Result<()> {
    let profile = env.profile(network)?;
    let file = fs::File::open(capture).with_context(|| capture.display().to_string())?;
    let parsed = parse_capture(BufReader::new(file))?;
    let classified = classify_capture(&profile, &parsed.records, env.exec);
    let activity = match date {
        Some(d) => Some(
            env.store()?
                .get_day(network, d)?
                .ok_or_else(|| fail("MissingArtifact", format!("no sealed day for {network} {d}")))?
                .activity,
        ),
        None => None,
    };
    let report = scan_report(network, &classified, parsed.success, activity.as_ref());
    match format {
        Format::Text => print!("{}", report.to_text()),
        Format::Table => print!("{}", report.to_table()),
        Format::Json => print_json(&report)?,
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, env: &Env, config: &Path, out: &Path, build_only: bool) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    cfg.parallel = cfg.parallel && !cli.sequential;
    if build_only {
        let profile = env.profiles.get(&cfg.sim.network).ok().cloned();
        let net = network_at(&cfg.sim, profile, cfg.sim.start_date)?;
        let truth = net.ground_truth();
        let path = out.join("ground_truth.json");
        write_atomic(&path, format!("{}\n", serde_json::to_string_pretty(&truth)?).as_bytes())?;
        return print_json(&serde_json::json!({"network": truth.network, "peers": truth.peers.len(), "ground_truth": path}));
    }
    // The report store lives under the output directory unless one is named.
    let store_root = if cli.store == Path::new("store") && std::env::var_os("P2PSCOPE_STORE").is_none() {
        out.join("store")
    } else {
        cli.store.clone()
    };
    let store = Store::open(&store_root)?;
    let progress = |r: &p2pscope::pipeline::DayReport| {
        let _ = p2pscope::pipeline::progress_line(io::stderr().lock(), r);
    };
    let (report, truth) = match env.profiles.get(&cfg.sim.network) {
        Ok(profile) if cli.config.is_some() => {
            let net = SimNetwork::build_with_profile(cfg.sim.clone(), profile.clone())?;
            p2pscope::pipeline::simulate_on(net, &cfg, &store, Some(&progress))?
        }
        _ => simulate(&cfg, &store, Some(&progress))?,
    };
    write_report(&report, &truth, out)?;
    write_plots(&report, out)?;
    print_json(&serde_json::json!({
        "network": report.network,
        "days": report.days.len(),
        "matches_ground_truth": report.matches_ground_truth(),
        "median_retention": report.analysis.median_retention,
        "out": out,
        "store": store_root,
    }))
}

fn write_plots(report: &SimulationReport, out: &Path) -> Result<()> {
    for metric in [Metric::AdRatio, Metric::Retention, Metric::Streaks, Metric::Coverage, Metric::Geo] {
        let e = emit_metric(metric, &report.analysis)?;
        if let Some(svg) = e.svg {
            write_atomic(&out.join("plots").join(format!("{}.svg", metric_name(metric))), svg.as_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse() {
        let d = |s: &str| s.parse::<NaiveDate>().unwrap();
        assert_eq!(parse_range("2024-01-01").unwrap(), (d("2024-01-01"), d("2024-01-01")));
        assert_eq!(parse_range("2024-01-01..2024-02-01").unwrap(), (d("2024-01-01"), d("2024-02-01")));
        assert!(parse_range("2024-02-01..2024-01-01").is_err());
        assert!(parse_range("yesterday").is_err());
    }

    #[test]
    fn error_kinds_are_stable() {
        let e: anyhow::Error = CrawlError::AllBootstrapUnreachable { attempted: 1 }.into();
        assert_eq!(error_kind(&e), "AllBootstrapUnreachable");
        assert_eq!(error_kind(&fail("MissingArtifact", "x")), "MissingArtifact");
        let e: anyhow::Error = ProfileError::UnknownNetwork("x".into()).into();
        assert_eq!(error_kind(&e.context("loading")), "UnknownNetwork");
    }
}
