//! Search for keys whose hash lands in a chosen bucket of a remote table.
//!
//! Bucket `256 - d` of remote `R` holds ids that agree with `R` on the top
//! `d` bits and differ at bit `d`. A key qualifies when its hash has that
//! `(d + 1)`-bit prefix, so a random key succeeds with probability
//! `2^-(d+1)`. Pool entries are ordered by hash, which turns "some stored key
//! with this prefix" into a single range query; keys generated while serving
//! one remote are reused for every later one.

use std::collections::BTreeMap;
use std::sync::RwLock;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{logdist, BucketAddress, HashFunction, NodeId, DEFAULT_MAX_CRAFTED_DEPTH};

/// Hash evaluations allowed per craft.
pub const DEFAULT_CRAFT_BUDGET: u64 = 1 << 20;
const DEFAULT_POOL_CAPACITY: usize = 1 << 18;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CraftError {
    #[error("bucket {bucket} is too deep: expected cost 2^{cost_log2} exceeds budget {budget} or depth limit {max_depth}")]
    BucketTooDeep { bucket: u16, cost_log2: u32, budget: u64, max_depth: usize },
    #[error("no key for bucket {bucket} found within {evaluations} evaluations")]
    BudgetExhausted { bucket: u16, evaluations: u64 },
    #[error("hashed dialect needs a preimage pool")]
    MissingPool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CraftOutcome {
    pub key: Vec<u8>,
    pub hash: NodeId,
    /// Fresh hash evaluations spent by this craft.
    pub evaluations: u64,
}

#[derive(Debug)]
pub struct PreimagePool {
    hash: HashFunction,
    key_len: usize,
    entries: BTreeMap<NodeId, Vec<u8>>,
    capacity: usize,
    budget: u64,
    max_depth: usize,
    rng: ChaCha8Rng,
}

impl PreimagePool {
    pub fn new(hash: HashFunction, key_len: usize, seed: u64) -> Self {
        PreimagePool {
            hash,
            key_len: key_len.max(1),
            entries: BTreeMap::new(),
            capacity: DEFAULT_POOL_CAPACITY,
            budget: DEFAULT_CRAFT_BUDGET,
            max_depth: DEFAULT_MAX_CRAFTED_DEPTH,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn hash_function(&self) -> HashFunction {
        self.hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every stored pair, for invariant checks.
    pub fn pairs(&self) -> impl Iterator<Item = (&NodeId, &Vec<u8>)> {
        self.entries.iter()
    }

    fn check_depth(&self, bucket: BucketAddress) -> Result<(), CraftError> {
        let depth = bucket.depth();
        let cost_log2 = depth as u32 + 1;
        let too_costly = cost_log2 >= 64 || (1u64 << cost_log2) > self.budget;
        if bucket.index() == 0 || depth > self.max_depth || too_costly {
            return Err(CraftError::BucketTooDeep {
                bucket: bucket.index(),
                cost_log2,
                budget: self.budget,
                max_depth: self.max_depth,
            });
        }
        Ok(())
    }

    /// Stored key whose hash already lands in `bucket` of `remote`.
    pub fn lookup(&self, remote: &NodeId, bucket: BucketAddress) -> Option<CraftOutcome> {
        if bucket.index() == 0 {
            return None;
        }
        let depth = bucket.depth();
        let mut prefix = *remote;
        prefix.flip_bit(depth);
        let low = prefix.fill_from(depth + 1, false);
        let high = prefix.fill_from(depth + 1, true);
        self.entries
            .range(low..=high)
            .next()
            .map(|(hash, key)| CraftOutcome { key: key.clone(), hash: *hash, evaluations: 0 })
    }

    /// Returns a key `k` with `logdist(hash(k), remote) == bucket`.
    pub fn craft(&mut self, remote: &NodeId, bucket: BucketAddress) -> Result<CraftOutcome, CraftError> {
        self.check_depth(bucket)?;
        if let Some(hit) = self.lookup(remote, bucket) {
            return Ok(hit);
        }
        if self.hash == HashFunction::Identity {
            return Ok(self.construct_identity(remote, bucket));
        }
        let mut evaluations = 0u64;
        let mut key = vec![0u8; self.key_len];
        while evaluations < self.budget {
            self.rng.fill_bytes(&mut key);
            let hash = self.hash.hash(&key);
            evaluations += 1;
            if self.entries.len() < self.capacity {
                self.entries.insert(hash, key.clone());
            }
            if logdist(&hash, remote) == bucket {
                return Ok(CraftOutcome { key, hash, evaluations });
            }
        }
        Err(CraftError::BudgetExhausted { bucket: bucket.index(), evaluations })
    }

    fn construct_identity(&mut self, remote: &NodeId, bucket: BucketAddress) -> CraftOutcome {
        let depth = bucket.depth();
        let mut bytes = [0u8; 32];
        self.rng.fill(&mut bytes[..]);
        let random = NodeId::from_bytes(bytes);
        let mut target = *remote;
        target.flip_bit(depth);
        let mut out = *target.as_bytes();
        for i in depth + 1..256 {
            let mask = 0x80u8 >> (i % 8);
            out[i / 8] = (out[i / 8] & !mask) | (random.as_bytes()[i / 8] & mask);
        }
        let hash = NodeId::from_bytes(out);
        let mut key = out.to_vec();
        key.resize(self.key_len.max(32), 0);
        if self.entries.len() < self.capacity {
            self.entries.insert(hash, key.clone());
        }
        CraftOutcome { key, hash, evaluations: 1 }
    }
}

/// Pool shared by concurrent enumerations: lookups take the read lock,
/// extension takes the write lock.
#[derive(Debug)]
pub struct SharedPreimagePool(RwLock<PreimagePool>);

impl SharedPreimagePool {
    pub fn new(pool: PreimagePool) -> Self {
        SharedPreimagePool(RwLock::new(pool))
    }

    pub fn hash_function(&self) -> HashFunction {
        self.0.read().expect("pool lock").hash_function()
    }

    pub fn craft(&self, remote: &NodeId, bucket: BucketAddress) -> Result<CraftOutcome, CraftError> {
        {
            let pool = self.0.read().expect("pool lock");
            pool.check_depth(bucket)?;
            if let Some(hit) = pool.lookup(remote, bucket) {
                return Ok(hit);
            }
        }
        self.0.write().expect("pool lock").craft(remote, bucket)
    }

    pub fn len(&self) -> usize {
        self.0.read().expect("pool lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
