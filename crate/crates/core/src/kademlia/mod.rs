//! Kademlia identity space, k-bucket tables and FIND_NODE dialects.
//!
//! Three dialects are modelled:
//!
//! * discv4-style: the query carries a target key; the remote looks up the
//!   peers closest to `keccak256(key)`.
//! * discv5-style: the query carries the log-distance of the bucket wanted.
//! * libp2p-style: like discv4 but the remote hashes with SHA-256.
//!
//! For the hashed dialects a crawler reads bucket `b` of a remote by sending
//! a key whose hash sits at log-distance `b` from the remote id; finding such
//! keys is the job of [`PreimagePool`].

mod enumerate;
mod preimage;
mod query;
mod table;
pub mod wire;

pub use enumerate::{enumerate_remote, EnumerateOptions, EnumerationResult, HelloError, QueryFailure};
pub use preimage::{CraftError, CraftOutcome, PreimagePool, SharedPreimagePool, DEFAULT_CRAFT_BUDGET};
pub use query::{answer_find_node, plan_enumeration, target_bucket, Dialect, FindNodeQuery, QueryTarget};
pub use table::{InsertOutcome, PeerEntry, RoutingTable, DEFAULT_K};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use sha3::Keccak256;

/// Buckets deeper than this many levels below the top are not crafted for.
pub const DEFAULT_MAX_CRAFTED_DEPTH: usize = 16;
pub const ID_BITS: u16 = 256;

/// 256-bit Kademlia identifier, most significant byte first.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId([u8; 32]);

impl NodeId {
    pub const ZERO: NodeId = NodeId([0; 32]);

    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        NodeId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn xor(&self, other: &NodeId) -> NodeId {
        let mut out = [0u8; 32];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        NodeId(out)
    }

    /// Number of significant bits; 0 for the all-zero id.
    pub fn bit_length(&self) -> u16 {
        for (i, byte) in self.0.iter().enumerate() {
            if *byte != 0 {
                return ID_BITS - (i as u16) * 8 - byte.leading_zeros() as u16;
            }
        }
        0
    }

    /// Bit `i` counted from the most significant end (0-based).
    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn flip_bit(&mut self, i: usize) {
        self.0[i / 8] ^= 0x80 >> (i % 8);
    }

    /// Copy of `self` with every bit from index `from` (MSB-first) onward
    /// set to `value`.
    pub fn fill_from(&self, from: usize, value: bool) -> NodeId {
        let mut out = self.0;
        for i in from..ID_BITS as usize {
            if value {
                out[i / 8] |= 0x80 >> (i % 8);
            } else {
                out[i / 8] &= !(0x80 >> (i % 8));
            }
        }
        NodeId(out)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({}..)", hex::encode(&self.0[..4]))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim_start_matches("0x")).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| "node id must be 32 bytes".to_string())?;
        Ok(NodeId(arr))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

/// k-bucket index: the bit length of `a XOR b`, in `0..=256`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketAddress(u16);

impl BucketAddress {
    pub const TOP: BucketAddress = BucketAddress(ID_BITS);

    pub fn new(index: u16) -> Option<Self> {
        (index <= ID_BITS).then_some(BucketAddress(index))
    }

    pub fn index(self) -> u16 {
        self.0
    }

    /// Levels below the top bucket (`256 - index`).
    pub fn depth(self) -> usize {
        (ID_BITS - self.0) as usize
    }
}

pub fn logdist(a: &NodeId, b: &NodeId) -> BucketAddress {
    BucketAddress(a.xor(b).bit_length())
}

/// Hash used by a dialect to map query keys into the id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashFunction {
    Keccak256,
    Sha256,
    /// Key bytes are the id (zero-padded or truncated to 32 bytes).
    Identity,
}

impl HashFunction {
    pub fn hash(self, key: &[u8]) -> NodeId {
        let mut out = [0u8; 32];
        match self {
            HashFunction::Keccak256 => out.copy_from_slice(&Keccak256::digest(key)),
            HashFunction::Sha256 => out.copy_from_slice(&Sha256::digest(key)),
            HashFunction::Identity => {
                let n = key.len().min(32);
                out[..n].copy_from_slice(&key[..n]);
            }
        }
        NodeId(out)
    }
}
