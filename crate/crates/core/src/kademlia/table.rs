use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use super::{logdist, BucketAddress, NodeId, ID_BITS};

pub const DEFAULT_K: usize = 16;

/// A routing-table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PeerEntry {
    pub node_id: NodeId,
    pub endpoint: SocketAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted(BucketAddress),
    Duplicate,
    BucketFull,
    /// The owner's own id is never stored.
    OwnId,
}

/// k-bucket routing table. Bucket `i` holds entries at log-distance `i`
/// from the owner, in insertion order, at most `k` of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    owner: NodeId,
    k: usize,
    // index 0 unused: only the owner sits at distance 0
    buckets: Vec<Vec<PeerEntry>>,
}

impl RoutingTable {
    pub fn new(owner: NodeId, k: usize) -> Self {
        RoutingTable { owner, k: k.max(1), buckets: vec![Vec::new(); ID_BITS as usize + 1] }
    }

    pub fn owner(&self) -> &NodeId {
        &self.owner
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn insert(&mut self, entry: PeerEntry) -> InsertOutcome {
        let bucket = logdist(&self.owner, &entry.node_id);
        if bucket.index() == 0 {
            return InsertOutcome::OwnId;
        }
        let slot = &mut self.buckets[bucket.index() as usize];
        if slot.iter().any(|e| e.node_id == entry.node_id) {
            return InsertOutcome::Duplicate;
        }
        if slot.len() >= self.k {
            return InsertOutcome::BucketFull;
        }
        slot.push(entry);
        InsertOutcome::Inserted(bucket)
    }

    pub fn remove(&mut self, node_id: &NodeId) -> bool {
        let bucket = logdist(&self.owner, node_id).index() as usize;
        let slot = &mut self.buckets[bucket];
        let before = slot.len();
        slot.retain(|e| &e.node_id != node_id);
        slot.len() != before
    }

    pub fn bucket(&self, bucket: BucketAddress) -> &[PeerEntry] {
        &self.buckets[bucket.index() as usize]
    }

    pub fn entries(&self) -> impl Iterator<Item = &PeerEntry> + '_ {
        self.buckets.iter().rev().flatten()
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lowest non-empty bucket index, if any.
    pub fn deepest_bucket(&self) -> Option<BucketAddress> {
        self.buckets.iter().position(|b| !b.is_empty()).map(|i| BucketAddress::new(i as u16).unwrap())
    }
}
