//! Single-shot scan payloads and classification of the captured replies.
//!
//! The scanning loop itself is external: this module builds the payload a
//! scanner sends and classifies `(address, port, response)` captures.
//!
//! Classes are tested in a fixed order, so every byte string gets exactly
//! one: empty, HTTP, Bitcoin-family `version` frame, Cardano handshake
//! (Cardano profiles only), garbage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};

use ciborium::Value;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::liveness::{DailyActivity, ProbeKind};
use crate::profile::{Family, Magic, NetworkProfile};
use crate::wire_bitcoin::{build_version_payload, parse_version_payload, WireMessage, HEADER_LEN};

/// Newest node-to-node handshake version proposed in Cardano probes.
pub const CARDANO_LATEST_VERSION: u64 = 14;
/// Oldest version still proposed.
pub const CARDANO_OLDEST_VERSION: u64 = 11;
const MUX_HEADER_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScanError {
    #[error("network family {0:?} has no scan payload")]
    UnsupportedFamily(Family),
    #[error("capture line {line}: {reason}")]
    BadCapture { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanProbe {
    pub network: String,
    pub port: u16,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanResponseClass {
    NoResponse,
    Http400,
    OtherHttp,
    VersionValidAny,
    VersionValidNetwork,
    CardanoPropose,
    CardanoAccept,
    CardanoRefuse,
    Garbage,
}

impl ScanResponseClass {
    pub const ALL: [ScanResponseClass; 9] = [
        ScanResponseClass::NoResponse,
        ScanResponseClass::Http400,
        ScanResponseClass::OtherHttp,
        ScanResponseClass::VersionValidAny,
        ScanResponseClass::VersionValidNetwork,
        ScanResponseClass::CardanoPropose,
        ScanResponseClass::CardanoAccept,
        ScanResponseClass::CardanoRefuse,
        ScanResponseClass::Garbage,
    ];

    pub fn is_version(self) -> bool {
        matches!(self, ScanResponseClass::VersionValidAny | ScanResponseClass::VersionValidNetwork)
    }

    pub fn is_cardano(self) -> bool {
        matches!(self, ScanResponseClass::CardanoPropose | ScanResponseClass::CardanoAccept | ScanResponseClass::CardanoRefuse)
    }
}

impl fmt::Display for ScanResponseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("class serializes");
        f.write_str(v.as_str().expect("unit variant"))
    }
}

fn cardano_propose_cbor(network_magic: u32) -> Vec<u8> {
    let params = || {
        Value::Array(vec![
            Value::Integer(network_magic.into()),
            Value::Bool(false), // initiator-only diffusion
            Value::Integer(0.into()), // peer sharing off
            Value::Bool(false), // query
        ])
    };
    let versions = (CARDANO_OLDEST_VERSION..=CARDANO_LATEST_VERSION)
        .map(|v| (Value::Integer(v.into()), params()))
        .collect();
    let msg = Value::Array(vec![Value::Integer(0.into()), Value::Map(versions)]);
    let mut out = Vec::new();
    ciborium::into_writer(&msg, &mut out).expect("in-memory write");
    out
}

/// Wraps a handshake message in a mux header: time, protocol 0 (handshake)
/// in initiator mode, length.
fn mux_wrap(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(MUX_HEADER_LEN + payload.len());
    out.extend_from_slice(&0u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// Payload a scanner sends to `port`.
pub fn build_probe(profile: &NetworkProfile, port: u16) -> Result<ScanProbe, ScanError> {
    let payload = match profile.family {
        Family::Bitcoin => {
            let magic = profile.magic.unwrap_or(Magic::BITCOIN);
            let remote = SocketAddr::from((Ipv4Addr::UNSPECIFIED, port));
            let local = SocketAddr::from((Ipv4Addr::UNSPECIFIED, 0));
            let version = build_version_payload(profile, local, remote, 0, 0);
            WireMessage::new(magic, "version", version).expect("static command").encode()
        }
        Family::Cardano => mux_wrap(&cardano_propose_cbor(profile.cardano_network_magic.unwrap_or(764_824_073))),
        other => return Err(ScanError::UnsupportedFamily(other)),
    };
    Ok(ScanProbe { network: profile.name.clone(), port, payload })
}

/// Class plus the fields the report needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub class: ScanResponseClass,
    /// Protocol version of a decoded `version` reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<i32>,
    /// Version a Cardano peer accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardano_version: Option<u64>,
}

impl Classification {
    fn of(class: ScanResponseClass) -> Self {
        Classification { class, protocol_version: None, cardano_version: None }
    }
}

pub fn classify_response(profile: &NetworkProfile, raw: &[u8]) -> ScanResponseClass {
    classify_detail(profile, raw).class
}

pub fn classify_detail(profile: &NetworkProfile, raw: &[u8]) -> Classification {
    use ScanResponseClass::*;
    if raw.is_empty() {
        return Classification::of(NoResponse);
    }
    if raw.starts_with(b"HTTP/") {
        let status = raw.split(|b| b.is_ascii_whitespace()).filter(|t| !t.is_empty()).nth(1);
        return Classification::of(if status == Some(b"400") { Http400 } else { OtherHttp });
    }
    if let Some((magic, version)) = version_frame(raw) {
        let network = profile.magic == Some(magic) && version == profile.protocol_version;
        return Classification {
            class: if network { VersionValidNetwork } else { VersionValidAny },
            protocol_version: Some(version),
            cardano_version: None,
        };
    }
    if profile.family == Family::Cardano {
        if let Some(c) = cardano_reply(raw) {
            return c;
        }
    }
    Classification::of(Garbage)
}

/// A leading, checksum-valid `version` frame under any magic.
fn version_frame(raw: &[u8]) -> Option<(Magic, i32)> {
    if raw.len() < HEADER_LEN {
        return None;
    }
    let magic = Magic::from_bytes(raw[..4].try_into().ok()?);
    let (msg, _) = WireMessage::decode_prefix(magic, raw).ok()?;
    if msg.command.as_str() != "version" {
        return None;
    }
    let info = parse_version_payload(&msg.payload).ok()?;
    Some((magic, info.protocol_version))
}

fn cardano_reply(raw: &[u8]) -> Option<Classification> {
    if let Some(c) = cardano_message(raw) {
        return Some(c);
    }
    if raw.len() > MUX_HEADER_LEN {
        let protocol = u16::from_be_bytes([raw[4], raw[5]]) & 0x7fff;
        let len = u16::from_be_bytes([raw[6], raw[7]]) as usize;
        if protocol == 0 && len == raw.len() - MUX_HEADER_LEN {
            return cardano_message(&raw[MUX_HEADER_LEN..]);
        }
    }
    None
}

fn as_u64(v: &Value) -> Option<u64> {
    v.as_integer().and_then(|i| u64::try_from(i).ok())
}

fn cardano_message(raw: &[u8]) -> Option<Classification> {
    // only arrays can be handshake messages; skip the decoder otherwise
    if !(0x80..=0x9f).contains(raw.first()?) {
        return None;
    }
    let value: Value = ciborium::from_reader(raw).ok()?;
    let items = value.as_array()?;
    let code = as_u64(items.first()?)?;
    use ScanResponseClass::*;
    match (code, items.len()) {
        (0, 2) if items[1].is_map() => Some(Classification::of(CardanoPropose)),
        (1, 3) => {
            let version = as_u64(&items[1])?;
            Some(Classification { class: CardanoAccept, protocol_version: None, cardano_version: Some(version) })
        }
        (2, 2) if items[1].is_array() => Some(Classification::of(CardanoRefuse)),
        _ => None,
    }
}

/// One line of a capture file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    pub address: IpAddr,
    pub port: u16,
    pub response: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Capture {
    /// TCP connects supplied by the capture stage, when recorded.
    pub success: Option<u64>,
    pub records: Vec<CaptureRecord>,
}

/// Parses `address port hex` lines. A missing or `-` response is empty.
/// `# success=N` anywhere in the header comments sets [`Capture::success`].
pub fn parse_capture<R: BufRead>(input: R) -> Result<Capture, ScanError> {
    let mut capture = Capture::default();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let bad = |reason: String| ScanError::BadCapture { line: line_no, reason };
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("success=") {
                capture.success = Some(v.trim().parse().map_err(|_| bad(format!("bad success count {v:?}")))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let address = fields.next().unwrap().parse().map_err(|_| bad("bad address".into()))?;
        let port = fields.next().ok_or_else(|| bad("missing port".into()))?.parse().map_err(|_| bad("bad port".into()))?;
        let response = match fields.next() {
            None | Some("-") => Vec::new(),
            Some(h) => hex::decode(h).map_err(|e| bad(format!("bad hex: {e}")))?,
        };
        if fields.next().is_some() {
            return Err(bad("trailing fields".into()));
        }
        capture.records.push(CaptureRecord { address, port, response });
    }
    Ok(capture)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifiedRecord {
    pub address: IpAddr,
    pub port: u16,
    pub classification: Classification,
}

pub fn classify_capture(profile: &NetworkProfile, records: &[CaptureRecord], execution: Execution) -> Vec<ClassifiedRecord> {
    execution.map(records, |r| ClassifiedRecord {
        address: r.address,
        port: r.port,
        classification: classify_detail(profile, &r.response),
    })
}

/// How the scan's valid responders overlap with the crawl's view that day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScanOverlap {
    /// Distinct valid responders.
    pub valid: u64,
    pub discovered: u64,
    pub tcp: u64,
    pub protocol: u64,
    pub active: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScanReport {
    pub network: String,
    /// TCP connects; the record count when the capture has no header.
    pub success: u64,
    /// Records with a non-empty reply.
    pub response: u64,
    pub http_400: u64,
    /// Valid `version` replies under any magic or version number.
    pub version_all: u64,
    /// Valid `version` replies carrying this network's magic and version.
    pub version_x: u64,
    /// Decoded Cardano handshake messages of any code.
    pub cardano_valid: u64,
    /// Accepted handshakes (code 1).
    pub cardano_handshake: u64,
    /// Accepted handshakes at the newest version.
    pub cardano_latest: u64,
    pub per_class: BTreeMap<ScanResponseClass, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<ScanOverlap>,
}

impl ScanReport {
    /// `version_x <= version_all <= response`.
    pub fn chain_holds(&self) -> bool {
        self.version_x <= self.version_all && self.version_all <= self.response
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("scan report: {}\n", self.network);
        for (label, v) in [
            ("success", self.success),
            ("response", self.response),
            ("http_400", self.http_400),
            ("version_all", self.version_all),
            ("version_x", self.version_x),
            ("cardano_valid", self.cardano_valid),
            ("cardano_handshake", self.cardano_handshake),
            ("cardano_latest", self.cardano_latest),
        ] {
            s.push_str(&format!("  {label:<18}{v}\n"));
        }
        if let Some(o) = &self.overlap {
            s.push_str(&format!(
                "  overlap           valid={} discovered={} tcp={} protocol={} active={}\n",
                o.valid, o.discovered, o.tcp, o.protocol, o.active
            ));
        }
        s
    }

    /// Tab-separated `metric value` rows.
    pub fn to_table(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        for (label, v) in [
            ("success", self.success),
            ("response", self.response),
            ("http_400", self.http_400),
            ("version_all", self.version_all),
            ("version_x", self.version_x),
            ("cardano_valid", self.cardano_valid),
            ("cardano_handshake", self.cardano_handshake),
            ("cardano_latest", self.cardano_latest),
        ] {
            s.push_str(&format!("{label}\t{v}\n"));
        }
        for (class, v) in &self.per_class {
            s.push_str(&format!("class:{class}\t{v}\n"));
        }
        s
    }
}

pub fn scan_report(
    network: &str,
    classified: &[ClassifiedRecord],
    success: Option<u64>,
    activity: Option<&DailyActivity>,
) -> ScanReport {
    use ScanResponseClass::*;
    let mut report = ScanReport {
        network: network.to_string(),
        success: success.unwrap_or(classified.len() as u64),
        ..Default::default()
    };
    let mut valid = BTreeSet::new();
    for r in classified {
        let c = r.classification;
        *report.per_class.entry(c.class).or_default() += 1;
        if c.class != NoResponse {
            report.response += 1;
        }
        match c.class {
            Http400 => report.http_400 += 1,
            VersionValidAny => report.version_all += 1,
            VersionValidNetwork => {
                report.version_all += 1;
                report.version_x += 1;
                valid.insert(r.address);
            }
            CardanoAccept => {
                report.cardano_valid += 1;
                report.cardano_handshake += 1;
                if c.cardano_version == Some(CARDANO_LATEST_VERSION) {
                    report.cardano_latest += 1;
                }
                valid.insert(r.address);
            }
            CardanoPropose | CardanoRefuse => report.cardano_valid += 1,
            NoResponse | OtherHttp | Garbage => {}
        }
    }
    if let Some(act) = activity {
        let count = |set: Option<&BTreeSet<IpAddr>>| set.map_or(0, |s| valid.intersection(s).count() as u64);
        report.overlap = Some(ScanOverlap {
            valid: valid.len() as u64,
            discovered: count(Some(&act.discovered)),
            tcp: count(act.responded_by_kind.get(&ProbeKind::Tcp)),
            protocol: count(act.responded_by_kind.get(&ProbeKind::Protocol)),
            active: count(Some(&act.active)),
        });
    }
    report
}
