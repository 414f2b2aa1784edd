//! Churn, concentration and coverage analytics over daily activity.
//!
//! All functions are pure. Medians are lower medians (the smaller middle
//! element for even counts). Fractions are returned at full precision;
//! only [`rounded_percentages`] rounds, for report tables.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::hash::Hash;
use std::net::IpAddr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liveness::{DailyActivity, ProbeKind};
use crate::store::{Category, JoinedRecord};
use crate::Execution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("baseline set is empty")]
    EmptyBaseline,
    #[error("invalid share vector: {0}")]
    InvalidShares(String),
    #[error("window {from}..={to} is not covered by the series")]
    WindowOutsideSeries { from: NaiveDate, to: NaiveDate },
    #[error("series dates must be strictly increasing")]
    UnorderedSeries,
}

/// Lower median; `None` for an empty slice.
pub fn lower_median<T: Copy + PartialOrd>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    Some(v[(v.len() - 1) / 2])
}

// ---- day-over-day churn ----

/// `|prev ∩ cur| / |prev|`.
pub fn retention<T: Ord>(prev: &BTreeSet<T>, cur: &BTreeSet<T>) -> Result<f64, MetricsError> {
    if prev.is_empty() {
        return Err(MetricsError::EmptyBaseline);
    }
    Ok(prev.intersection(cur).count() as f64 / prev.len() as f64)
}

/// `|cur \ prev| / |prev|`.
pub fn new_rate<T: Ord>(prev: &BTreeSet<T>, cur: &BTreeSet<T>) -> Result<f64, MetricsError> {
    if prev.is_empty() {
        return Err(MetricsError::EmptyBaseline);
    }
    Ok(cur.difference(prev).count() as f64 / prev.len() as f64)
}

/// Per-date active sets of one network; missing dates are gaps.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyActivitySeries {
    pub network: String,
    pub days: BTreeMap<NaiveDate, BTreeSet<IpAddr>>,
}

impl DailyActivitySeries {
    pub fn new(network: &str) -> Self {
        DailyActivitySeries { network: network.to_string(), days: BTreeMap::new() }
    }

    /// Builds from activities given in strictly increasing date order.
    pub fn from_activities<'a>(network: &str, days: impl IntoIterator<Item = &'a DailyActivity>) -> Result<Self, MetricsError> {
        let mut s = Self::new(network);
        for a in days {
            if s.days.keys().next_back().is_some_and(|last| *last >= a.date) {
                return Err(MetricsError::UnorderedSeries);
            }
            s.days.insert(a.date, a.active.clone());
        }
        Ok(s)
    }

    pub fn insert(&mut self, date: NaiveDate, active: BTreeSet<IpAddr>) {
        self.days.insert(date, active);
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.days.keys().copied().collect()
    }

    /// Dates strictly between the first and last observation with no data.
    pub fn gaps(&self) -> Vec<NaiveDate> {
        let (Some(first), Some(last)) = (self.days.keys().next(), self.days.keys().next_back()) else { return Vec::new() };
        first.iter_days().take_while(|d| d <= last).filter(|d| !self.days.contains_key(d)).collect()
    }
}

/// Churn between `date - 1` and `date`; `gap` when either day is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnPoint {
    pub date: NaiveDate,
    pub gap: bool,
    pub retention: Option<f64>,
    pub new_rate: Option<f64>,
}

/// One point per observed date after the first. Retention is never bridged
/// across missing days.
pub fn churn_series(series: &DailyActivitySeries) -> Vec<ChurnPoint> {
    series
        .days
        .iter()
        .skip(1)
        .map(|(date, cur)| {
            let prev = date.checked_sub_days(Days::new(1)).and_then(|p| series.days.get(&p));
            match prev {
                Some(prev) => ChurnPoint {
                    date: *date,
                    gap: false,
                    retention: retention(prev, cur).ok(),
                    new_rate: new_rate(prev, cur).ok(),
                },
                None => ChurnPoint { date: *date, gap: true, retention: None, new_rate: None },
            }
        })
        .collect()
}

/// Lower median of the defined retention values.
pub fn median_retention(points: &[ChurnPoint]) -> Option<f64> {
    lower_median(&points.iter().filter_map(|p| p.retention).collect::<Vec<_>>())
}

// ---- uptime streaks ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UptimeStreaks {
    pub from: NaiveDate,
    pub to: NaiveDate,
    /// Longest consecutive-day run per address active at least once.
    pub per_address: BTreeMap<IpAddr, u32>,
    /// `(streak, fraction of addresses with streak ≤ it)`, ascending.
    pub cdf: Vec<(u32, f64)>,
}

/// Longest run of consecutive active days per address within `[from, to]`.
/// Days missing from the series count as inactive and break streaks.
pub fn uptime_streaks(series: &DailyActivitySeries, from: NaiveDate, to: NaiveDate) -> Result<UptimeStreaks, MetricsError> {
    let covered = match (series.days.keys().next(), series.days.keys().next_back()) {
        (Some(first), Some(last)) => *first <= from && to <= *last && from <= to,
        _ => false,
    };
    if !covered {
        return Err(MetricsError::WindowOutsideSeries { from, to });
    }
    let mut current: HashMap<IpAddr, u32> = HashMap::new();
    let mut best: BTreeMap<IpAddr, u32> = BTreeMap::new();
    let empty = BTreeSet::new();
    for day in from.iter_days().take_while(|d| *d <= to) {
        let active = series.days.get(&day).unwrap_or(&empty);
        current.retain(|a, _| active.contains(a));
        for a in active {
            let run = current.entry(*a).or_insert(0);
            *run += 1;
            let b = best.entry(*a).or_insert(0);
            *b = (*b).max(*run);
        }
    }
    let cdf = streak_cdf(&best);
    Ok(UptimeStreaks { from, to, per_address: best, cdf })
}

fn streak_cdf(per_address: &BTreeMap<IpAddr, u32>) -> Vec<(u32, f64)> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for s in per_address.values() {
        *counts.entry(*s).or_default() += 1;
    }
    let total = per_address.len() as f64;
    let mut acc = 0;
    counts
        .into_iter()
        .map(|(s, c)| {
            acc += c;
            (s, acc as f64 / total)
        })
        .collect()
}

// ---- concentration ----

/// Group shares summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareVector(Vec<f64>);

impl ShareVector {
    pub fn new(shares: Vec<f64>) -> Result<Self, MetricsError> {
        if shares.is_empty() {
            return Err(MetricsError::InvalidShares("no groups".into()));
        }
        if let Some(bad) = shares.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(MetricsError::InvalidShares(format!("share {bad} outside [0, 1]")));
        }
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricsError::InvalidShares(format!("shares sum to {sum}")));
        }
        Ok(ShareVector(shares))
    }

    /// Shares proportional to `counts` (zero counts dropped).
    pub fn from_counts<I: IntoIterator<Item = usize>>(counts: I) -> Result<Self, MetricsError> {
        let counts: Vec<usize> = counts.into_iter().filter(|c| *c > 0).collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(MetricsError::InvalidShares("no observations".into()));
        }
        Self::new(counts.into_iter().map(|c| c as f64 / total as f64).collect())
    }

    pub fn shares(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Herfindahl–Hirschman index `Σ s_j²`, in `[1/M, 1]`.
pub fn hhi(shares: &ShareVector) -> f64 {
    shares.0.iter().map(|s| s * s).sum()
}

/// AS-level shares of the joined active set; unmatched addresses are
/// excluded because they belong to no known AS.
pub fn as_shares(joined: &[JoinedRecord]) -> Result<ShareVector, MetricsError> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for asn in joined.iter().filter_map(|j| j.asn) {
        *counts.entry(asn).or_default() += 1;
    }
    ShareVector::from_counts(counts.into_values())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeoLevel {
    Country,
    Continent,
}

/// Named shares (full precision), descending by share then name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoShares {
    pub level: GeoLevel,
    pub total: usize,
    pub groups: Vec<(String, f64)>,
}

impl GeoShares {
    pub fn vector(&self) -> Result<ShareVector, MetricsError> {
        ShareVector::new(self.groups.iter().map(|(_, s)| *s).collect())
    }

    pub fn share(&self, name: &str) -> f64 {
        self.groups.iter().find(|(n, _)| n == name).map_or(0.0, |(_, s)| *s)
    }

    /// The `top` largest groups plus an "Other" group holding the rest.
    pub fn top_with_other(&self, top: usize) -> Vec<(String, f64)> {
        if self.groups.len() <= top + 1 {
            return self.groups.clone();
        }
        let mut out: Vec<(String, f64)> = self.groups[..top].to_vec();
        out.push(("Other".to_string(), self.groups[top..].iter().map(|(_, s)| s).sum()));
        out
    }
}

pub fn geo_shares(joined: &[JoinedRecord], level: GeoLevel) -> GeoShares {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for j in joined {
        let name = match level {
            GeoLevel::Country => j.country.clone(),
            GeoLevel::Continent => j.continent.name().to_string(),
        };
        *counts.entry(name).or_default() += 1;
    }
    let total = joined.len();
    let mut groups: Vec<(String, f64)> = counts.into_iter().map(|(n, c)| (n, c as f64 / total as f64)).collect();
    groups.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
    GeoShares { level, total, groups }
}

/// Percentages rounded to one decimal with the largest-remainder method, so
/// the rounded column still sums to exactly 100.0.
pub fn rounded_percentages(shares: &[(String, f64)]) -> Vec<(String, f64)> {
    let total: f64 = shares.iter().map(|(_, s)| s).sum();
    if shares.is_empty() || total <= 0.0 {
        return shares.to_vec();
    }
    let tenths: Vec<f64> = shares.iter().map(|(_, s)| s / total * 1000.0).collect();
    let mut floors: Vec<u64> = tenths.iter().map(|t| t.floor() as u64).collect();
    let short = 1000 - floors.iter().sum::<u64>().min(1000);
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (tenths[a] - tenths[a].floor(), tenths[b] - tenths[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().take(short as usize) {
        floors[i] += 1;
    }
    shares.iter().zip(floors).map(|((n, _), f)| (n.clone(), f as f64 / 10.0)).collect()
}

// ---- peer tables ----

/// Medians over responders of one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerTableStats {
    pub responders: usize,
    pub table_size: usize,
    pub active_in_table: usize,
    /// Median of `active_in_table / table_size` per responder.
    pub prop_active: f64,
    /// Median of `|table ∩ active| / |active|` per responder.
    pub prop_covered: f64,
}

pub fn peer_table_stats<'a, T, I>(tables: I, active: &BTreeSet<T>) -> Option<PeerTableStats>
where
    T: Ord + 'a,
    I: IntoIterator<Item = &'a BTreeSet<T>>,
{
    let mut sizes = Vec::new();
    let mut in_table = Vec::new();
    let mut prop_active = Vec::new();
    let mut prop_covered = Vec::new();
    for t in tables {
        let hit = t.iter().filter(|a| active.contains(a)).count();
        sizes.push(t.len());
        in_table.push(hit);
        prop_active.push(if t.is_empty() { 0.0 } else { hit as f64 / t.len() as f64 });
        prop_covered.push(if active.is_empty() { 0.0 } else { hit as f64 / active.len() as f64 });
    }
    Some(PeerTableStats {
        responders: sizes.len(),
        table_size: lower_median(&sizes)?,
        active_in_table: lower_median(&in_table)?,
        prop_active: lower_median(&prop_active)?,
        prop_covered: lower_median(&prop_covered)?,
    })
}

/// Distinct addresses of a stored peer table.
pub fn table_addresses(peers: &[crate::peer::PeerRef]) -> BTreeSet<IpAddr> {
    peers.iter().map(|p| p.addr.ip()).collect()
}

// ---- greedy coverage ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve<K> {
    /// Tables in selection order.
    pub order: Vec<K>,
    /// Cumulative covered fraction of the active set after each pick.
    pub coverage: Vec<f64>,
}

/// Unions tables greedily by marginal newly-covered active addresses. Ties
/// go to the smallest table key. Stops once no table adds anything.
pub fn greedy_coverage<K, T>(tables: &BTreeMap<K, BTreeSet<T>>, active: &BTreeSet<T>) -> CoverageCurve<K>
where
    K: Ord + Clone,
    T: Ord + Hash + Clone,
{
    let keys: Vec<&K> = tables.keys().collect();
    let relevant: Vec<Vec<&T>> = tables.values().map(|t| t.iter().filter(|a| active.contains(a)).collect()).collect();
    let mut covered: std::collections::HashSet<&T> = std::collections::HashSet::new();
    // lazy greedy: a stale gain is an upper bound on the fresh one
    let mut heap: BinaryHeap<(usize, Reverse<usize>)> =
        relevant.iter().enumerate().map(|(i, t)| (t.len(), Reverse(i))).collect();
    let mut curve = CoverageCurve { order: Vec::new(), coverage: Vec::new() };
    while let Some((stale, Reverse(i))) = heap.pop() {
        if stale == 0 {
            break;
        }
        let gain = relevant[i].iter().filter(|a| !covered.contains(*a)).count();
        if gain < stale {
            heap.push((gain, Reverse(i)));
            continue;
        }
        covered.extend(relevant[i].iter().copied());
        curve.order.push(keys[i].clone());
        curve.coverage.push(covered.len() as f64 / active.len() as f64);
    }
    curve
}

// ---- cross-network overlap ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix<K> {
    pub names: Vec<K>,
    /// `cells[i][j]` = percentage of network i's actives also active in j.
    pub cells: Vec<Vec<f64>>,
}

pub fn overlap_matrix<K, T>(sets: &BTreeMap<K, BTreeSet<T>>) -> OverlapMatrix<K>
where
    K: Ord + Clone,
    T: Ord,
{
    let names: Vec<K> = sets.keys().cloned().collect();
    let values: Vec<&BTreeSet<T>> = sets.values().collect();
    let cells = values
        .iter()
        .enumerate()
        .map(|(i, a)| {
            values
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    if i == j {
                        100.0
                    } else if a.is_empty() {
                        0.0
                    } else {
                        100.0 * a.intersection(b).count() as f64 / a.len() as f64
                    }
                })
                .collect()
        })
        .collect();
    OverlapMatrix { names, cells }
}

// ---- composition ----

/// Proportions of one day's active set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub active: usize,
    pub ad_ratio: f64,
    pub ipv4: f64,
    pub ipv6: f64,
    pub isp: f64,
    pub hosting: f64,
    pub other_category: f64,
    pub unknown_category: f64,
    /// Share of actives answering each probe kind.
    pub tcp: f64,
    pub protocol: f64,
    pub crawl: f64,
}

/// Composition of one day; `joined` is the enrichment join of the actives.
pub fn composition(activity: &DailyActivity, joined: &[JoinedRecord]) -> Composition {
    let n = activity.active.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let v4 = activity.active.iter().filter(|a| a.is_ipv4()).count();
    let cat: HashMap<IpAddr, Category> = joined.iter().map(|j| (j.address, j.category)).collect();
    let count_cat = |c: Category| activity.active.iter().filter(|a| cat.get(a).copied().unwrap_or(Category::Unknown) == c).count();
    let by_kind = |k: ProbeKind| {
        activity.responded_by_kind.get(&k).map_or(0, |s| s.iter().filter(|a| activity.active.contains(a)).count())
    };
    Composition {
        active: n,
        ad_ratio: activity.ad_ratio(),
        ipv4: frac(v4),
        ipv6: if n == 0 { 0.0 } else { 1.0 - frac(v4) },
        isp: frac(count_cat(Category::Isp)),
        hosting: frac(count_cat(Category::Hosting)),
        other_category: frac(count_cat(Category::Other)),
        unknown_category: frac(count_cat(Category::Unknown)),
        tcp: frac(by_kind(ProbeKind::Tcp)),
        protocol: frac(by_kind(ProbeKind::Protocol)),
        crawl: frac(by_kind(ProbeKind::Crawl)),
    }
}

/// Compositions of many days, parallel over days.
pub fn composition_series(days: &[(DailyActivity, Vec<JoinedRecord>)], exec: Execution) -> Vec<Composition> {
    exec.map(days, |(a, j)| composition(a, j))
}

/// Median of daily proportions, field by field. The IPv6 share is taken
/// as the complement of the median IPv4 share so the pair still sums to 1.
pub fn median_composition(days: &[Composition]) -> Option<Composition> {
    let med = |f: fn(&Composition) -> f64| lower_median(&days.iter().map(f).collect::<Vec<_>>());
    let ipv4 = med(|c| c.ipv4)?;
    Some(Composition {
        active: lower_median(&days.iter().map(|c| c.active).collect::<Vec<_>>())?,
        ad_ratio: med(|c| c.ad_ratio)?,
        ipv4,
        ipv6: 1.0 - ipv4,
        isp: med(|c| c.isp)?,
        hosting: med(|c| c.hosting)?,
        other_category: med(|c| c.other_category)?,
        unknown_category: med(|c| c.unknown_category)?,
        tcp: med(|c| c.tcp)?,
        protocol: med(|c| c.protocol)?,
        crawl: med(|c| c.crawl)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Continent, UNKNOWN_COUNTRY};

    fn set(items: &[&'static str]) -> BTreeSet<&'static str> {
        items.iter().copied().collect()
    }

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, 4, day).unwrap()
    }

    fn ip(n: u32) -> IpAddr {
        IpAddr::from(std::net::Ipv4Addr::from(0x0a00_0000 + n))
    }

    #[test]
    fn retention_examples() {
        assert_eq!(retention(&set(&["a", "b"]), &set(&["a", "b"])), Ok(1.0));
        assert_eq!(retention(&set(&["a"]), &set(&["b"])), Ok(0.0));
        assert_eq!(retention(&set(&["a", "b", "c", "d"]), &set(&["a", "b", "e"])), Ok(0.5));
        assert_eq!(retention(&BTreeSet::<&str>::new(), &set(&["a"])), Err(MetricsError::EmptyBaseline));
    }

    #[test]
    fn new_rate_examples() {
        assert_eq!(new_rate(&set(&["a"]), &set(&["a"])), Ok(0.0));
        assert_eq!(new_rate(&set(&["a", "b"]), &set(&["a", "b", "c", "d"])), Ok(1.0));
        let (p, c) = (set(&["a", "b", "c"]), set(&["b", "x"]));
        let out = p.difference(&c).count() as f64 / p.len() as f64;
        assert!((retention(&p, &c).unwrap() + out - 1.0).abs() < 1e-12);
    }

    #[test]
    fn churn_series_marks_gaps() {
        let mut s = DailyActivitySeries::new("x");
        s.insert(d(1), [ip(1), ip(2)].into());
        s.insert(d(2), [ip(1)].into());
        s.insert(d(4), [ip(1)].into());
        let pts = churn_series(&s);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].retention, Some(0.5));
        assert!(pts[1].gap && pts[1].retention.is_none());
        assert_eq!(s.gaps(), vec![d(3)]);
    }

    #[test]
    fn streak_examples() {
        let mut s = DailyActivitySeries::new("x");
        for day in 5..=20 {
            let mut active: BTreeSet<IpAddr> = [ip(1)].into();
            if day % 2 == 0 {
                active.insert(ip(2));
            }
            s.insert(d(day), active);
        }
        let st = uptime_streaks(&s, d(5), d(20)).unwrap();
        assert_eq!(st.per_address[&ip(1)], 16);
        assert_eq!(st.per_address[&ip(2)], 1);
        assert_eq!(st.cdf, vec![(1, 0.5), (16, 1.0)]);
        assert!(uptime_streaks(&s, d(4), d(20)).is_err());
    }

    #[test]
    fn hhi_examples() {
        let uniform = ShareVector::new(vec![0.25; 4]).unwrap();
        assert!((hhi(&uniform) - 0.25).abs() < 1e-12);
        assert_eq!(hhi(&ShareVector::new(vec![1.0]).unwrap()), 1.0);
        assert!((hhi(&ShareVector::new(vec![0.5, 0.3, 0.2]).unwrap()) - 0.38).abs() < 1e-12);
        assert!(ShareVector::new(vec![0.5, 0.4]).is_err());
    }

    fn joined(country: &str, continent: Continent, asn: Option<u32>) -> JoinedRecord {
        JoinedRecord {
            address: ip(0),
            prefix: None,
            country: country.into(),
            continent,
            asn,
            category: Category::Isp,
        }
    }

    #[test]
    fn geo_share_rollup_and_rounding() {
        let mut recs = Vec::new();
        for (i, c) in ["US", "DE", "FR", "NL", "GB", "CA", "JP", "SG", "FI", "CH", "AU"].iter().enumerate() {
            for _ in 0..(11 - i) {
                recs.push(joined(c, Continent::Europe, Some(i as u32)));
            }
        }
        let g = geo_shares(&recs, GeoLevel::Country);
        let top = g.top_with_other(9);
        assert_eq!(top.len(), 10);
        assert_eq!(top[0].0, "US");
        assert_eq!(top[9].0, "Other");
        let rounded = rounded_percentages(&top);
        let sum: f64 = rounded.iter().map(|(_, p)| p).sum();
        assert!((sum - 100.0).abs() < 1e-9);
        let one = geo_shares(&[joined("DE", Continent::Europe, None)], GeoLevel::Continent);
        assert_eq!(one.share("Europe"), 1.0);
        assert_eq!(geo_shares(&[joined(UNKNOWN_COUNTRY, Continent::Unknown, None)], GeoLevel::Country).share("ZZ"), 1.0);
    }

    #[test]
    fn as_shares_skip_unknown() {
        let recs = vec![joined("DE", Continent::Europe, Some(1)), joined("ZZ", Continent::Unknown, None)];
        assert_eq!(hhi(&as_shares(&recs).unwrap()), 1.0);
    }

    #[test]
    fn peer_table_examples() {
        let active = set(&["a", "b", "c"]);
        let st = peer_table_stats([&active], &active).unwrap();
        assert_eq!((st.prop_active, st.prop_covered), (1.0, 1.0));
        let t1 = set(&["a", "x", "y", "z"]);
        let t2 = set(&["a", "b"]);
        let st = peer_table_stats([&t1, &t2], &active).unwrap();
        assert_eq!(st.table_size, 2);
        assert_eq!(st.active_in_table, 1);
        assert_eq!(st.prop_active, 0.25);
        assert!((st.prop_covered - 1.0 / 3.0).abs() < 1e-12);
        assert!(peer_table_stats(std::iter::empty::<&BTreeSet<&str>>(), &active).is_none());
    }

    #[test]
    fn greedy_example() {
        let tables: BTreeMap<&str, BTreeSet<&str>> =
            [("T1", set(&["a", "b", "c"])), ("T2", set(&["b", "c"])), ("T3", set(&["c", "d"]))].into();
        let c = greedy_coverage(&tables, &set(&["a", "b", "c", "d"]));
        assert_eq!(c.order, vec!["T1", "T3"]);
        assert_eq!(c.coverage, vec![0.75, 1.0]);
        let single: BTreeMap<u8, BTreeSet<&str>> = [(0, set(&["a", "b"]))].into();
        assert_eq!(greedy_coverage(&single, &set(&["a", "b"])).coverage, vec![1.0]);
        assert!(greedy_coverage(&single, &BTreeSet::new()).order.is_empty());
    }

    #[test]
    fn overlap_examples() {
        let a: BTreeSet<u32> = (0..10).collect();
        let b: BTreeSet<u32> = (5..105).collect();
        let m = overlap_matrix(&[("A", a), ("B", b)].into());
        assert_eq!(m.cells, vec![vec![100.0, 50.0], vec![5.0, 100.0]]);
    }

    #[test]
    fn composition_fixture() {
        let mut a = DailyActivity::empty("polkadot", d(1));
        for i in 0..8 {
            a.active.insert(ip(i));
        }
        for i in 0..2u16 {
            a.active.insert(IpAddr::from(std::net::Ipv6Addr::new(0x2001, 0xdb8, 0, 0, 0, 0, 0, i)));
        }
        a.discovered = a.active.clone();
        a.responded_by_kind.insert(ProbeKind::Tcp, a.active.iter().take(5).copied().collect());
        let c = composition(&a, &[]);
        assert!((c.ipv6 - 0.2).abs() < 1e-12);
        assert_eq!(c.ipv4 + c.ipv6, 1.0);
        assert_eq!(c.tcp, 0.5);
        assert_eq!(c.unknown_category, 1.0);
        let m = median_composition(&[c.clone(), c]).unwrap();
        assert!((m.ipv4 + m.ipv6 - 1.0).abs() < 1e-12);
    }
}
