use serde::{Deserialize, Serialize};

use super::preimage::{CraftError, PreimagePool};
use super::{logdist, BucketAddress, HashFunction, NodeId, PeerEntry, RoutingTable, ID_BITS};

/// FIND_NODE flavour spoken by a DHT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dialect {
    /// discv4: target key, remote hashes with Keccak-256.
    #[serde(rename = "discv4", alias = "hashed-target-keccak")]
    HashedKeccak,
    /// discv5: the query names the log-distance directly.
    #[serde(rename = "discv5", alias = "explicit-distance")]
    ExplicitDistance,
    /// libp2p: target key, remote hashes with SHA-256.
    #[serde(rename = "libp2p", alias = "hashed-target-sha256")]
    HashedSha256,
}

impl Dialect {
    pub fn response_limit(self) -> usize {
        match self {
            Dialect::HashedKeccak | Dialect::ExplicitDistance => 16,
            Dialect::HashedSha256 => 20,
        }
    }

    pub fn default_hash(self) -> Option<HashFunction> {
        match self {
            Dialect::HashedKeccak => Some(HashFunction::Keccak256),
            Dialect::HashedSha256 => Some(HashFunction::Sha256),
            Dialect::ExplicitDistance => None,
        }
    }

    /// Length of the keys a crawler sends (public-key sized for discv4).
    pub fn key_len(self) -> usize {
        match self {
            Dialect::HashedKeccak => 64,
            _ => 32,
        }
    }

    pub fn is_hashed(self) -> bool {
        self != Dialect::ExplicitDistance
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryTarget {
    /// Pre-image; the remote hashes it with `hash`.
    Key { key: Vec<u8>, hash: HashFunction },
    Distance(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindNodeQuery {
    pub dialect: Dialect,
    pub target: QueryTarget,
    pub response_limit: usize,
}

impl FindNodeQuery {
    pub fn key(dialect: Dialect, key: Vec<u8>, hash: HashFunction) -> Self {
        FindNodeQuery { dialect, target: QueryTarget::Key { key, hash }, response_limit: dialect.response_limit() }
    }

    pub fn distance(distance: u16) -> Self {
        let dialect = Dialect::ExplicitDistance;
        FindNodeQuery { dialect, target: QueryTarget::Distance(distance), response_limit: dialect.response_limit() }
    }
}

/// Queries reading buckets `256` down to `256 - depth + 1` of `remote`.
///
/// Hashed dialects draw keys from `pool`; the explicit-distance dialect needs
/// none and accepts any depth up to 256.
pub fn plan_enumeration(
    dialect: Dialect,
    remote: &NodeId,
    depth: usize,
    pool: Option<&mut PreimagePool>,
) -> Result<Vec<FindNodeQuery>, CraftError> {
    let depth = depth.min(ID_BITS as usize);
    let buckets = (0..depth).map(|d| BucketAddress::new(ID_BITS - d as u16).expect("in range"));
    if !dialect.is_hashed() {
        return Ok(buckets.map(|b| FindNodeQuery::distance(b.index())).collect());
    }
    let pool = pool.ok_or(CraftError::MissingPool)?;
    buckets
        .map(|b| pool.craft(remote, b).map(|out| FindNodeQuery::key(dialect, out.key, pool.hash_function())))
        .collect()
}

/// How a remote answers a FIND_NODE against its table.
pub fn answer_find_node(table: &RoutingTable, query: &FindNodeQuery) -> Vec<PeerEntry> {
    let limit = query.response_limit;
    match &query.target {
        QueryTarget::Distance(d) => match BucketAddress::new(*d) {
            Some(b) if b.index() > 0 => table.bucket(b).iter().take(limit).copied().collect(),
            _ => Vec::new(),
        },
        QueryTarget::Key { key, hash } => {
            let target = hash.hash(key);
            let mut entries: Vec<(NodeId, PeerEntry)> =
                table.entries().map(|e| (e.node_id.xor(&target), *e)).collect();
            let by_distance = |a: &(NodeId, PeerEntry), b: &(NodeId, PeerEntry)| a.0.cmp(&b.0);
            if entries.len() > limit {
                entries.select_nth_unstable_by(limit, by_distance);
                entries.truncate(limit);
            }
            entries.sort_by(by_distance);
            entries.into_iter().map(|(_, e)| e).collect()
        }
    }
}

/// Bucket a hashed query was aimed at, from the remote's point of view.
pub fn target_bucket(remote: &NodeId, query: &FindNodeQuery) -> BucketAddress {
    match &query.target {
        QueryTarget::Distance(d) => BucketAddress::new(*d).unwrap_or(BucketAddress::TOP),
        QueryTarget::Key { key, hash } => logdist(&hash.hash(key), remote),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_id(rng: &mut ChaCha8Rng) -> NodeId {
        NodeId::from_bytes(rng.gen())
    }

    fn entry(id: NodeId, i: u32) -> PeerEntry {
        PeerEntry { node_id: id, endpoint: std::net::SocketAddr::from(([10, 0, (i >> 8) as u8, i as u8], 30303)) }
    }

    #[test]
    fn explicit_distance_plan() {
        let plan = plan_enumeration(Dialect::ExplicitDistance, &NodeId::ZERO, 3, None).unwrap();
        let ds: Vec<_> = plan.iter().map(|q| q.target.clone()).collect();
        assert_eq!(ds, [QueryTarget::Distance(256), QueryTarget::Distance(255), QueryTarget::Distance(254)]);
        assert!(plan.iter().all(|q| q.response_limit == 16));
    }

    #[test]
    fn keccak_plan_lands_in_top_buckets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let remote = random_id(&mut rng);
        let mut pool = PreimagePool::new(HashFunction::Keccak256, 64, 1);
        let plan = plan_enumeration(Dialect::HashedKeccak, &remote, 2, Some(&mut pool)).unwrap();
        let got: Vec<u16> = plan.iter().map(|q| target_bucket(&remote, q).index()).collect();
        assert_eq!(got, [256, 255]);
    }

    #[test]
    fn sha256_plan_verified_under_sha256() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let remote = random_id(&mut rng);
        let mut pool = PreimagePool::new(HashFunction::Sha256, 32, 2);
        let plan = plan_enumeration(Dialect::HashedSha256, &remote, 1, Some(&mut pool)).unwrap();
        assert_eq!(plan.len(), 1);
        let QueryTarget::Key { key, .. } = &plan[0].target else { panic!() };
        assert_eq!(logdist(&HashFunction::Sha256.hash(key), &remote).index(), 256);
        assert_eq!(plan[0].response_limit, 20);
    }

    #[test]
    fn hashed_plan_without_pool_fails() {
        assert_eq!(plan_enumeration(Dialect::HashedKeccak, &NodeId::ZERO, 1, None), Err(CraftError::MissingPool));
    }

    #[test]
    fn empty_table_answers_nothing() {
        let t = RoutingTable::new(NodeId::ZERO, 16);
        assert!(answer_find_node(&t, &FindNodeQuery::distance(256)).is_empty());
        assert!(answer_find_node(&t, &FindNodeQuery::key(Dialect::HashedKeccak, vec![1; 64], HashFunction::Keccak256))
            .is_empty());
    }

    #[test]
    fn small_table_sorted_by_xor_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = RoutingTable::new(random_id(&mut rng), 16);
        for i in 0..5 {
            t.insert(entry(random_id(&mut rng), i));
        }
        assert_eq!(t.len(), 5);
        let key = vec![9u8; 64];
        let q = FindNodeQuery::key(Dialect::HashedKeccak, key.clone(), HashFunction::Keccak256);
        let got = answer_find_node(&t, &q);
        // brute force: sort every entry by its xor distance to the hashed key
        let target = HashFunction::Keccak256.hash(&key);
        let mut expected: Vec<PeerEntry> = t.entries().copied().collect();
        expected.sort_by_key(|e| e.node_id.xor(&target));
        assert_eq!(got, expected);
    }

    #[test]
    fn distance_query_truncates_to_limit() {
        // owner zero, k = 20: every id with top bit set lands in bucket 256
        let mut t = RoutingTable::new(NodeId::ZERO, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..20 {
            let mut b: [u8; 32] = rng.gen();
            b[0] |= 0x80;
            t.insert(entry(NodeId::from_bytes(b), i));
        }
        assert_eq!(t.bucket(BucketAddress::TOP).len(), 20);
        let got = answer_find_node(&t, &FindNodeQuery::distance(256));
        assert_eq!(got.len(), 16);
        assert!(got.iter().all(|e| t.bucket(BucketAddress::TOP).contains(e)));
    }

    #[test]
    fn response_cap_holds_for_all_dialects() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = RoutingTable::new(random_id(&mut rng), 20);
        for i in 0..400 {
            t.insert(entry(random_id(&mut rng), i));
        }
        for _ in 0..20 {
            let key: Vec<u8> = (0..32).map(|_| rng.gen()).collect();
            for (dialect, hash) in [(Dialect::HashedKeccak, HashFunction::Keccak256), (Dialect::HashedSha256, HashFunction::Sha256)] {
                let q = FindNodeQuery::key(dialect, key.clone(), hash);
                assert!(answer_find_node(&t, &q).len() <= dialect.response_limit());
            }
            let q = FindNodeQuery::distance(rng.gen_range(0..=256));
            assert!(answer_find_node(&t, &q).len() <= 16);
        }
    }
}
