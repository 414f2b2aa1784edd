//! On-disk day store and enrichment joins.
//!
//! Layout under the store root, one directory per network:
//!
//! ```text
//! <root>/<network>/snapshots/<date>.json        crawl snapshot
//! <root>/<network>/probes/<date>/<HH>.tsv       probe results of one hour slot
//! <root>/<network>/days/<date>.jsonl            header, activity, one table per line
//! <root>/<network>/labels/<date>.jsonl          header, one label per line
//! ```
//!
//! Every `.jsonl` file opens with a schema header line. Files are written to
//! a `.tmp` sibling and renamed into place, so a reader never sees a partial
//! artifact; a sealed artifact is never rewritten. Writers for one
//! (network, date) hold a `.lock` file for the duration of the write.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use ipnet::IpNet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crawl::CrawlSnapshot;
use crate::liveness::{read_probe_lines, write_probe_lines, DailyActivity, ProbeKind, ProbeResult};
use crate::netlabel::{read_label_lines, write_label_lines, NetworkLabel};
use crate::peer::{PeerKey, PeerRef};

pub const SCHEMA_VERSION: u32 = 1;
pub const UNKNOWN_COUNTRY: &str = "ZZ";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{network} {date} is already sealed")]
    DuplicateDay { network: String, date: NaiveDate },
    #[error("{0} is already sealed")]
    DuplicateArtifact(String),
    #[error("{0} is locked by another writer")]
    Locked(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("invalid network name {0:?}")]
    BadNetwork(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

fn corrupt(path: &Path, reason: impl ToString) -> StoreError {
    StoreError::Corrupt { path: path.display().to_string(), reason: reason.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    network: String,
    date: NaiveDate,
}

impl Header {
    fn new(schema: &str, network: &str, date: NaiveDate) -> Self {
        Header { schema: schema.to_string(), version: SCHEMA_VERSION, network: network.to_string(), date }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TableLine {
    responder: PeerKey,
    peers: Vec<PeerRef>,
}

/// Everything sealed for one network on one day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDay {
    pub network: String,
    pub date: NaiveDate,
    pub activity: DailyActivity,
    /// Peer list each responder returned.
    pub tables: BTreeMap<PeerKey, Vec<PeerRef>>,
    pub labels: Vec<NetworkLabel>,
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Handle on a store root directory.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn network_dir(&self, network: &str) -> Result<PathBuf, StoreError> {
        let ok = !network.is_empty()
            && network.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !network.starts_with('.');
        if !ok {
            return Err(StoreError::BadNetwork(network.to_string()));
        }
        Ok(self.root.join(network))
    }

    fn path(&self, network: &str, kind: &str, file: String) -> Result<PathBuf, StoreError> {
        Ok(self.network_dir(network)?.join(kind).join(file))
    }

    fn lock(&self, network: &str, date: NaiveDate) -> Result<LockGuard, StoreError> {
        let dir = self.network_dir(network)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{date}.lock"));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(StoreError::Locked(path.display().to_string())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Writes `path` through a temporary file; fails if `path` is sealed.
    fn seal<F>(path: &Path, write: F) -> Result<(), StoreError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        if path.exists() {
            return Err(StoreError::DuplicateArtifact(path.display().to_string()));
        }
        let dir = path.parent().expect("artifact paths have a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = path.with_extension("tmp");
        let result = (|| {
            let mut out = BufWriter::new(File::create(&tmp)?);
            write(&mut out)?;
            out.into_inner().map_err(|e| e.into_error())?.sync_all()
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(io_err(&tmp)(e));
        }
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    fn read_lines(path: &Path) -> Result<Option<Vec<String>>, StoreError> {
        match File::open(path) {
            Ok(f) => BufReader::new(f).lines().collect::<Result<Vec<_>, _>>().map(Some).map_err(io_err(path)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    fn check_header(path: &Path, line: Option<&String>, schema: &str) -> Result<Header, StoreError> {
        let line = line.ok_or_else(|| corrupt(path, "missing header"))?;
        let header: Header = serde_json::from_str(line).map_err(|e| corrupt(path, e))?;
        if header.schema != schema || header.version != SCHEMA_VERSION {
            return Err(corrupt(path, format!("unsupported schema {} v{}", header.schema, header.version)));
        }
        Ok(header)
    }

    // ---- snapshots ----

    pub fn put_snapshot(&self, date: NaiveDate, snapshot: &CrawlSnapshot) -> Result<PathBuf, StoreError> {
        let _lock = self.lock(&snapshot.network, date)?;
        let path = self.path(&snapshot.network, "snapshots", format!("{date}.json"))?;
        Self::seal(&path, |out| {
            serde_json::to_writer(&mut *out, snapshot)?;
            out.write_all(b"\n")
        })?;
        Ok(path)
    }

    pub fn get_snapshot(&self, network: &str, date: NaiveDate) -> Result<Option<CrawlSnapshot>, StoreError> {
        let path = self.path(network, "snapshots", format!("{date}.json"))?;
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| corrupt(&path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    // ---- probes ----

    pub fn put_probes(&self, network: &str, date: NaiveDate, hour: u32, results: &[ProbeResult]) -> Result<PathBuf, StoreError> {
        let _lock = self.lock(network, date)?;
        let path = self.path(network, "probes", format!("{date}/{hour:02}.tsv"))?;
        Self::seal(&path, |out| write_probe_lines(&mut *out, results))?;
        Ok(path)
    }

    /// All sealed hour slots of a day, in hour order.
    pub fn get_probes(&self, network: &str, date: NaiveDate) -> Result<Vec<ProbeResult>, StoreError> {
        let dir = self.path(network, "probes", date.to_string())?;
        let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        files.sort();
        let mut out = Vec::new();
        for f in files {
            let file = File::open(&f).map_err(io_err(&f))?;
            out.extend(read_probe_lines(BufReader::new(file)).map_err(|e| corrupt(&f, e))?);
        }
        Ok(out)
    }

    // ---- days ----

    pub fn put_day(&self, day: &StoredDay) -> Result<(), StoreError> {
        let _lock = self.lock(&day.network, day.date)?;
        let days = self.path(&day.network, "days", format!("{}.jsonl", day.date))?;
        let labels = self.path(&day.network, "labels", format!("{}.jsonl", day.date))?;
        if days.exists() || labels.exists() {
            return Err(StoreError::DuplicateDay { network: day.network.clone(), date: day.date });
        }
        Self::seal(&labels, |out| {
            serde_json::to_writer(&mut *out, &Header::new("labels", &day.network, day.date))?;
            out.write_all(b"\n")?;
            write_label_lines(&day.network, &day.labels, &mut *out)
        })?;
        // the day file seals last: its presence marks the day complete
        Self::seal(&days, |out| {
            serde_json::to_writer(&mut *out, &Header::new("day", &day.network, day.date))?;
            out.write_all(b"\n")?;
            serde_json::to_writer(&mut *out, &day.activity)?;
            out.write_all(b"\n")?;
            for (responder, peers) in &day.tables {
                serde_json::to_writer(&mut *out, &TableLine { responder: *responder, peers: peers.clone() })?;
                out.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    /// `None` when the day was never sealed.
    pub fn get_day(&self, network: &str, date: NaiveDate) -> Result<Option<StoredDay>, StoreError> {
        let days = self.path(network, "days", format!("{date}.jsonl"))?;
        let Some(lines) = Self::read_lines(&days)? else { return Ok(None) };
        Self::check_header(&days, lines.first(), "day")?;
        let activity: DailyActivity = serde_json::from_str(lines.get(1).ok_or_else(|| corrupt(&days, "missing activity"))?)
            .map_err(|e| corrupt(&days, e))?;
        let mut tables = BTreeMap::new();
        for line in &lines[2..] {
            let t: TableLine = serde_json::from_str(line).map_err(|e| corrupt(&days, e))?;
            tables.insert(t.responder, t.peers);
        }
        let labels_path = self.path(network, "labels", format!("{date}.jsonl"))?;
        let labels = match Self::read_lines(&labels_path)? {
            None => Vec::new(),
            Some(lines) => {
                Self::check_header(&labels_path, lines.first(), "labels")?;
                read_label_lines(lines[1..].join("\n").as_bytes()).map_err(|e| corrupt(&labels_path, e))?
            }
        };
        Ok(Some(StoredDay { network: network.to_string(), date, activity, tables, labels }))
    }

    /// Sealed dates of a network, ascending.
    pub fn days(&self, network: &str) -> Result<Vec<NaiveDate>, StoreError> {
        let dir = self.network_dir(network)?.join("days");
        let rd = match fs::read_dir(&dir) {
            Ok(rd) => rd,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut out: Vec<NaiveDate> = rd
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".jsonl")?.parse().ok())
            .collect();
        out.sort();
        Ok(out)
    }

    /// Networks with at least one directory in the store.
    pub fn networks(&self) -> Result<Vec<String>, StoreError> {
        let mut out: Vec<String> = fs::read_dir(&self.root)
            .map_err(io_err(&self.root))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        out.sort();
        Ok(out)
    }

    /// Sealed days within `[from, to]`.
    pub fn range(&self, network: &str, from: NaiveDate, to: NaiveDate) -> Result<Vec<StoredDay>, StoreError> {
        let mut out = Vec::new();
        for date in self.days(network)?.into_iter().filter(|d| *d >= from && *d <= to) {
            out.extend(self.get_day(network, date)?);
        }
        Ok(out)
    }

    /// Single flat table over every sealed day of `network`: one row per
    /// discovered or active address.
    pub fn export_csv<W: Write>(&self, network: &str, out: W) -> Result<usize, StoreError> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| corrupt(Path::new(network), e);
        w.write_record(["network", "date", "address", "discovered", "active", "tcp", "protocol", "crawl", "label", "rule_fired"])
            .map_err(csv_err)?;
        let mut rows = 0;
        for date in self.days(network)? {
            let Some(day) = self.get_day(network, date)? else { continue };
            let labels: HashMap<IpAddr, &NetworkLabel> = day.labels.iter().map(|l| (l.address, l)).collect();
            let addrs: BTreeSet<IpAddr> = day.activity.discovered.union(&day.activity.active).copied().collect();
            let flag = |b: bool| if b { "1" } else { "0" };
            for a in addrs {
                let kind = |k: ProbeKind| day.activity.responded_by_kind.get(&k).is_some_and(|s| s.contains(&a));
                let (label, rule) = match labels.get(&a) {
                    Some(l) => (l.label.clone(), serde_json::to_value(l.rule_fired).ok().and_then(|v| v.as_str().map(String::from))),
                    None => (String::new(), None),
                };
                w.write_record([
                    network,
                    &date.to_string(),
                    &a.to_string(),
                    flag(day.activity.discovered.contains(&a)),
                    flag(day.activity.active.contains(&a)),
                    flag(kind(ProbeKind::Tcp)),
                    flag(kind(ProbeKind::Protocol)),
                    flag(kind(ProbeKind::Crawl)),
                    &label,
                    &rule.unwrap_or_default(),
                ])
                .map_err(csv_err)?;
                rows += 1;
            }
        }
        w.flush().map_err(io_err(Path::new(network)))?;
        Ok(rows)
    }
}

// ---- enrichment ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Continent {
    Africa,
    Asia,
    Europe,
    NorthAmerica,
    Oceania,
    SouthAmerica,
    Unknown,
}

impl Continent {
    pub const ALL: [Continent; 6] =
        [Continent::Africa, Continent::Asia, Continent::Europe, Continent::NorthAmerica, Continent::Oceania, Continent::SouthAmerica];

    pub fn name(self) -> &'static str {
        match self {
            Continent::Africa => "Africa",
            Continent::Asia => "Asia",
            Continent::Europe => "Europe",
            Continent::NorthAmerica => "North America",
            Continent::Oceania => "Oceania",
            Continent::SouthAmerica => "South America",
            Continent::Unknown => "Unknown",
        }
    }
}

impl FromStr for Continent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match norm.as_str() {
            "af" | "africa" => Continent::Africa,
            "as" | "asia" => Continent::Asia,
            "eu" | "europe" => Continent::Europe,
            "na" | "northamerica" => Continent::NorthAmerica,
            "oc" | "oceania" => Continent::Oceania,
            "sa" | "southamerica" => Continent::SouthAmerica,
            _ => return Err(format!("unknown continent {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Isp,
    Hosting,
    Other,
    Unknown,
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "isp" => Ok(Category::Isp),
            "hosting" => Ok(Category::Hosting),
            "other" => Ok(Category::Other),
            _ => Err(format!("unknown category {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichmentRecord {
    pub prefix: IpNet,
    pub country: String,
    pub continent: Continent,
    pub asn: u32,
    pub category: Category,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnrichmentError {
    #[error("prefixes {0} and {1} overlap")]
    Overlap(IpNet, IpNet),
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

/// Static geolocation / AS dataset with longest-prefix lookup.
#[derive(Debug, Clone, Default)]
pub struct EnrichmentDataset {
    records: Vec<EnrichmentRecord>,
    /// prefix length -> network -> record index, longest lengths first.
    by_len: Vec<(u8, HashMap<IpNet, usize>)>,
}

/// One active address joined with its enrichment (or the unknown marker).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinedRecord {
    pub address: IpAddr,
    pub prefix: Option<IpNet>,
    pub country: String,
    pub continent: Continent,
    pub asn: Option<u32>,
    pub category: Category,
}

impl JoinedRecord {
    pub fn is_unknown(&self) -> bool {
        self.prefix.is_none()
    }
}

impl EnrichmentDataset {
    pub fn new(mut records: Vec<EnrichmentRecord>) -> Result<Self, EnrichmentError> {
        for r in &mut records {
            r.prefix = r.prefix.trunc();
        }
        let mut sorted: Vec<&EnrichmentRecord> = records.iter().collect();
        sorted.sort_by(|a, b| {
            let fam = |n: &IpNet| matches!(n, IpNet::V6(_));
            (fam(&a.prefix), a.prefix.network(), a.prefix.prefix_len())
                .cmp(&(fam(&b.prefix), b.prefix.network(), b.prefix.prefix_len()))
        });
        // CIDR blocks either nest or are disjoint, so checking neighbours in
        // start order finds every overlap
        for w in sorted.windows(2) {
            if w[0].prefix.contains(&w[1].prefix.network()) {
                return Err(EnrichmentError::Overlap(w[0].prefix, w[1].prefix));
            }
        }
        let mut by_len: BTreeMap<std::cmp::Reverse<u8>, HashMap<IpNet, usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_len.entry(std::cmp::Reverse(r.prefix.prefix_len())).or_default().insert(r.prefix, i);
        }
        let by_len = by_len.into_iter().map(|(k, v)| (k.0, v)).collect();
        Ok(EnrichmentDataset { records, by_len })
    }

    /// Reads `prefix,country,continent,asn,category` rows (header optional).
    pub fn from_csv<R: std::io::Read>(input: R) -> Result<Self, EnrichmentError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 1;
            let bad = |reason: String| EnrichmentError::BadRecord { line, reason };
            let row = row.map_err(|e| bad(e.to_string()))?;
            if line == 1 && row.get(0) == Some("prefix") {
                continue;
            }
            if row.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", row.len())));
            }
            records.push(EnrichmentRecord {
                prefix: row[0].parse().map_err(|e: ipnet::AddrParseError| bad(e.to_string()))?,
                country: row[1].to_ascii_uppercase(),
                continent: row[2].parse().map_err(bad)?,
                asn: row[3].trim_start_matches("AS").parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                category: row[4].parse().map_err(bad)?,
            });
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[EnrichmentRecord] {
        &self.records
    }

    pub fn lookup(&self, address: IpAddr) -> Option<&EnrichmentRecord> {
        self.by_len.iter().find_map(|(len, map)| {
            let net = IpNet::new(address, *len).ok()?.trunc();
            map.get(&net).map(|&i| &self.records[i])
        })
    }

    pub fn join(&self, address: IpAddr) -> JoinedRecord {
        match self.lookup(address) {
            Some(r) => JoinedRecord {
                address,
                prefix: Some(r.prefix),
                country: r.country.clone(),
                continent: r.continent,
                asn: Some(r.asn),
                category: r.category,
            },
            None => JoinedRecord {
                address,
                prefix: None,
                country: UNKNOWN_COUNTRY.to_string(),
                continent: Continent::Unknown,
                asn: None,
                category: Category::Unknown,
            },
        }
    }
}

/// Joins every active address; unmatched ones carry the unknown marker.
pub fn enrich(activity: &DailyActivity, dataset: &EnrichmentDataset) -> Vec<JoinedRecord> {
    activity.active.iter().map(|a| dataset.join(*a)).collect()
}
