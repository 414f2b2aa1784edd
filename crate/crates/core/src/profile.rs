//! Static network descriptions.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::kademlia::Dialect;

/// Discovery family a network belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Bitcoin Core forks: `getaddr` / `addr` over MAGIC-framed TCP.
    Bitcoin,
    /// Kademlia DHTs (discv4, discv5, libp2p).
    Kademlia,
    /// Single request / single list response (RPC peer lists, sampled caches).
    PeerList,
    /// Scan-only network with a CBOR handshake.
    Cardano,
}

/// How a peer-list network answers discovery requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PeerListStyle {
    /// Node returns its current active connections.
    #[default]
    Rpc,
    /// Node returns a fresh random sample of its peer cache.
    Sampled,
}

/// 4-byte network secret prefixing every Bitcoin-family frame.
///
/// Held as the integer the reference client uses; on the wire it is written
/// little-endian, so Bitcoin's `0xd9b4bef9` appears as `f9 be b4 d9`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Magic(u32);

impl Magic {
    pub const BITCOIN: Magic = Magic(0xd9b4_bef9);
    pub const DOGECOIN: Magic = Magic(0xc0c0_c0c0);
    pub const BITCOIN_CASH: Magic = Magic(0xe8f3_e1e3);
    pub const LITECOIN: Magic = Magic(0xdbb6_c0fb);

    pub const fn new(value: u32) -> Self {
        Magic(value)
    }

    pub const fn value(self) -> u32 {
        self.0
    }

    pub const fn to_bytes(self) -> [u8; 4] {
        self.0.to_le_bytes()
    }

    pub const fn from_bytes(bytes: [u8; 4]) -> Self {
        Magic(u32::from_le_bytes(bytes))
    }
}

impl fmt::Debug for Magic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Magic({:08x})", self.0)
    }
}

impl fmt::Display for Magic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08x}", self.0)
    }
}

impl FromStr for Magic {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim_start_matches("0x");
        u32::from_str_radix(s, 16).map(Magic)
    }
}

impl Serialize for Magic {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Magic {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_depth() -> usize {
    crate::kademlia::DEFAULT_MAX_CRAFTED_DEPTH
}

/// Static description of one network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magic: Option<Magic>,
    /// Protocol version advertised in handshakes and expected from
    /// network-specific scan responses.
    #[serde(default)]
    pub protocol_version: i32,
    /// Ports probed in addition to the advertised one.
    #[serde(default)]
    pub default_ports: Vec<u16>,
    /// Ports an Internet scan targets; falls back to `default_ports`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scan_ports: Vec<u16>,
    #[serde(default)]
    pub bootstrap: Vec<SocketAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialect: Option<Dialect>,
    #[serde(default = "default_depth")]
    pub crawl_depth: usize,
    /// DHT protocol id (discv5 / libp2p); discv4 has none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_list: Option<PeerListStyle>,
    /// Cardano handshake network magic (mainnet 764824073).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardano_network_magic: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_rules: Option<PathBuf>,
}

impl NetworkProfile {
    fn base(name: &str, family: Family) -> Self {
        NetworkProfile {
            name: name.to_string(),
            family,
            magic: None,
            protocol_version: 0,
            default_ports: Vec::new(),
            scan_ports: Vec::new(),
            bootstrap: Vec::new(),
            dialect: None,
            crawl_depth: default_depth(),
            protocol_id: None,
            peer_list: None,
            cardano_network_magic: None,
            label_rules: None,
        }
    }

    fn bitcoin_like(name: &str, magic: Magic, version: i32, ports: &[u16]) -> Self {
        NetworkProfile {
            magic: Some(magic),
            protocol_version: version,
            default_ports: ports.to_vec(),
            ..Self::base(name, Family::Bitcoin)
        }
    }

    pub fn bitcoin() -> Self {
        Self::bitcoin_like("bitcoin", Magic::BITCOIN, 70016, &[8333])
    }

    pub fn dogecoin() -> Self {
        NetworkProfile {
            scan_ports: vec![22556, 19919],
            ..Self::bitcoin_like("dogecoin", Magic::DOGECOIN, 70015, &[22556])
        }
    }

    /// Shared discovery layer of Bitcoin Cash, Bitcoin SV and eCash.
    pub fn bitcoin_cash() -> Self {
        NetworkProfile {
            scan_ports: vec![8333, 8334, 8433],
            ..Self::bitcoin_like("bitcoin-cash", Magic::BITCOIN_CASH, 70016, &[8333])
        }
    }

    pub fn litecoin() -> Self {
        Self::bitcoin_like("litecoin", Magic::LITECOIN, 70017, &[9333])
    }

    pub fn cardano() -> Self {
        NetworkProfile {
            default_ports: vec![3001],
            scan_ports: vec![3000, 3001, 3002, 6000, 6001],
            cardano_network_magic: Some(764_824_073),
            ..Self::base("cardano", Family::Cardano)
        }
    }

    pub fn ethereum_discv4() -> Self {
        NetworkProfile {
            default_ports: vec![30303],
            dialect: Some(Dialect::HashedKeccak),
            ..Self::base("ethereum-discv4", Family::Kademlia)
        }
    }

    pub fn ethereum_discv5() -> Self {
        NetworkProfile {
            default_ports: vec![9000],
            dialect: Some(Dialect::ExplicitDistance),
            protocol_id: Some("discv5".to_string()),
            ..Self::base("ethereum-discv5", Family::Kademlia)
        }
    }

    pub fn celestia() -> Self {
        NetworkProfile {
            default_ports: vec![2121],
            dialect: Some(Dialect::HashedSha256),
            protocol_id: Some("/celestia/celestia/kad/1.0.0".to_string()),
            ..Self::base("celestia", Family::Kademlia)
        }
    }

    pub fn ripple() -> Self {
        NetworkProfile {
            default_ports: vec![2459, 51235],
            peer_list: Some(PeerListStyle::Rpc),
            ..Self::base("ripple", Family::PeerList)
        }
    }

    pub fn stellar() -> Self {
        NetworkProfile {
            default_ports: vec![11625],
            peer_list: Some(PeerListStyle::Sampled),
            ..Self::base("stellar", Family::PeerList)
        }
    }

    /// Every built-in profile.
    pub fn builtin() -> Vec<NetworkProfile> {
        vec![
            Self::bitcoin(),
            Self::dogecoin(),
            Self::bitcoin_cash(),
            Self::litecoin(),
            Self::cardano(),
            Self::ethereum_discv4(),
            Self::ethereum_discv5(),
            Self::celestia(),
            Self::ripple(),
            Self::stellar(),
        ]
    }

    pub fn builtin_named(name: &str) -> Option<NetworkProfile> {
        Self::builtin().into_iter().find(|p| p.name == name)
    }

    pub fn scan_ports(&self) -> &[u16] {
        if self.scan_ports.is_empty() {
            &self.default_ports
        } else {
            &self.scan_ports
        }
    }

    pub fn with_bootstrap(mut self, bootstrap: Vec<SocketAddr>) -> Self {
        self.bootstrap = bootstrap;
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("profile config: {0}")]
    Parse(String),
    #[error("duplicate network name {0:?}")]
    DuplicateName(String),
    #[error("network {network:?}: {reason}")]
    Invalid { network: String, reason: String },
    #[error("unknown network {0:?}")]
    UnknownNetwork(String),
}

/// Operator profile file: one `[[network]]` table per measured network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ProfileConfig {
    #[serde(default, rename = "network")]
    pub networks: Vec<NetworkProfile>,
}

impl ProfileConfig {
    /// Parses and validates; relative `label_rules` paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ProfileError> {
        let mut cfg: ProfileConfig = toml::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
        for p in &mut cfg.networks {
            if let Some(rules) = &mut p.label_rules {
                if rules.is_relative() {
                    *rules = base.join(&*rules);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ProfileError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Built-in profiles, used when no file is given.
    pub fn builtin() -> Self {
        ProfileConfig { networks: NetworkProfile::builtin() }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.networks {
            if !seen.insert(p.name.as_str()) {
                return Err(ProfileError::DuplicateName(p.name.clone()));
            }
            let invalid = |reason: &str| ProfileError::Invalid { network: p.name.clone(), reason: reason.to_string() };
            match p.family {
                Family::Bitcoin if p.magic.is_none() => return Err(invalid("bitcoin family needs a magic")),
                Family::Kademlia if p.dialect.is_none() => return Err(invalid("kademlia family needs a dialect")),
                _ => {}
            }
            if let Some(rules) = &p.label_rules {
                if !rules.exists() {
                    return Err(invalid(&format!("label rules {} do not exist", rules.display())));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NetworkProfile, ProfileError> {
        self.networks.iter().find(|p| p.name == name).ok_or_else(|| ProfileError::UnknownNetwork(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_magics() {
        assert_eq!(NetworkProfile::bitcoin().magic.unwrap().value(), 0xd9b4bef9);
        assert_eq!(NetworkProfile::dogecoin().magic.unwrap().value(), 0xc0c0c0c0);
        assert_eq!(NetworkProfile::bitcoin_cash().magic.unwrap().value(), 0xe8f3e1e3);
        assert_eq!(NetworkProfile::litecoin().magic.unwrap().value(), 0xdbb6c0fb);
        assert_eq!(Magic::BITCOIN.to_bytes(), [0xf9, 0xbe, 0xb4, 0xd9]);
    }

    #[test]
    fn magic_parses_hex() {
        assert_eq!("0xe8f3e1e3".parse::<Magic>().unwrap(), Magic::BITCOIN_CASH);
        assert_eq!("dbb6c0fb".parse::<Magic>().unwrap(), Magic::LITECOIN);
    }

    #[test]
    fn default_ports() {
        assert_eq!(NetworkProfile::bitcoin().default_ports, vec![8333]);
        assert_eq!(NetworkProfile::dogecoin().default_ports, vec![22556]);
        assert_eq!(NetworkProfile::litecoin().default_ports, vec![9333]);
        assert_eq!(NetworkProfile::bitcoin_cash().scan_ports(), &[8333, 8334, 8433]);
        assert_eq!(NetworkProfile::cardano().scan_ports(), &[3000, 3001, 3002, 6000, 6001]);
    }

    #[test]
    fn profile_config_validates() {
        let base = Path::new(".");
        let ok = "[[network]]\nname = \"btc\"\nfamily = \"bitcoin\"\nmagic = \"d9b4bef9\"\nprotocol_version = 70016\n";
        let cfg = ProfileConfig::from_toml(ok, base).unwrap();
        assert_eq!(cfg.get("btc").unwrap().magic, Some(Magic::BITCOIN));
        assert!(matches!(ProfileConfig::from_toml(&format!("{ok}{ok}"), base), Err(ProfileError::DuplicateName(_))));
        let no_magic = "[[network]]\nname = \"x\"\nfamily = \"bitcoin\"\n";
        assert!(ProfileConfig::from_toml(no_magic, base).is_err());
        let missing = format!("{ok}label_rules = \"does/not/exist.toml\"\n");
        assert!(ProfileConfig::from_toml(&missing, base).is_err());
        ProfileConfig::builtin().validate().unwrap();
    }
}
