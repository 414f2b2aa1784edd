use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::preimage::SharedPreimagePool;
use super::query::Dialect;
use super::wire::{decode_response, encode_request, Request, Response};
use super::{logdist, BucketAddress, NodeId, PeerEntry, DEFAULT_MAX_CRAFTED_DEPTH, ID_BITS};
use crate::peer::HandshakeMeta;
use crate::transport::{Transport, TransportError};

/// How to read one remote's table.
#[derive(Debug, Clone)]
pub struct EnumerateOptions {
    pub dialect: Dialect,
    pub depth: usize,
    pub protocol_id: String,
    pub timeout: Duration,
}

impl EnumerateOptions {
    pub fn new(dialect: Dialect) -> Self {
        EnumerateOptions {
            dialect,
            depth: DEFAULT_MAX_CRAFTED_DEPTH,
            protocol_id: String::new(),
            timeout: Duration::from_secs(20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub bucket: Option<u16>,
    pub error: String,
}

/// Why the opening hello failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HelloError {
    Transport(TransportError),
    /// Connection accepted, empty reply.
    Silent,
    Protocol(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnumerationResult {
    /// Id the remote announced in its hello reply.
    pub node_id: Option<NodeId>,
    pub meta: HandshakeMeta,
    /// Union of all answers, deduplicated by node id.
    pub peers: BTreeMap<NodeId, PeerEntry>,
    /// True when the hello and every planned query succeeded.
    pub complete: bool,
    pub queries_sent: usize,
    /// Crafted keys checked against the remote id before sending.
    pub keys_verified: usize,
    pub failures: Vec<QueryFailure>,
    pub hello_error: Option<HelloError>,
}

impl EnumerationResult {
    pub fn responded(&self) -> bool {
        self.node_id.is_some()
    }
}

fn exchange(
    transport: &dyn Transport,
    remote: SocketAddr,
    opts: &EnumerateOptions,
    request: &Request,
) -> Result<Response, HelloError> {
    let raw = encode_request(&opts.protocol_id, request).map_err(|e| HelloError::Protocol(e.to_string()))?;
    let reply = transport.exchange(remote, &raw, opts.timeout).map_err(HelloError::Transport)?;
    if reply.is_empty() {
        return Err(HelloError::Silent);
    }
    decode_response(&reply).map_err(|e| HelloError::Protocol(e.to_string()))
}

fn describe(e: &HelloError) -> String {
    match e {
        HelloError::Transport(t) => t.to_string(),
        HelloError::Silent => "empty reply".to_string(),
        HelloError::Protocol(p) => p.clone(),
    }
}

/// Reads buckets `256` down to `256 - depth + 1` of the table at `remote`.
///
/// The remote is greeted first to learn its id, which the hashed dialects
/// need in order to craft keys. Queries go out one at a time; a failed query
/// is recorded and the walk continues, leaving `complete` false.
pub fn enumerate_remote(
    transport: &dyn Transport,
    remote: SocketAddr,
    opts: &EnumerateOptions,
    pool: Option<&SharedPreimagePool>,
) -> EnumerationResult {
    let mut result = EnumerationResult::default();
    result.queries_sent += 1;
    let remote_id = match exchange(transport, remote, opts, &Request::Hello) {
        Ok(Response::HelloReply { node_id, meta }) => {
            result.node_id = Some(node_id);
            result.meta = meta;
            node_id
        }
        Ok(other) => {
            let error = format!("unexpected reply {other:?}");
            result.failures.push(QueryFailure { bucket: None, error: error.clone() });
            result.hello_error = Some(HelloError::Protocol(error));
            return result;
        }
        Err(error) => {
            result.failures.push(QueryFailure { bucket: None, error: describe(&error) });
            result.hello_error = Some(error);
            return result;
        }
    };

    let depth = opts.depth.min(ID_BITS as usize);
    for level in 0..depth {
        let bucket = BucketAddress::new(ID_BITS - level as u16).expect("in range");
        let request = if opts.dialect.is_hashed() {
            let Some(pool) = pool else {
                result.failures.push(QueryFailure { bucket: Some(bucket.index()), error: "no preimage pool".into() });
                break;
            };
            match pool.craft(&remote_id, bucket) {
                Ok(out) => {
                    let hash = pool.hash_function().hash(&out.key);
                    assert_eq!(logdist(&hash, &remote_id), bucket, "crafted key missed its bucket");
                    result.keys_verified += 1;
                    Request::FindNodeKey(out.key)
                }
                Err(e) => {
                    // deeper buckets are only costlier
                    result.failures.push(QueryFailure { bucket: Some(bucket.index()), error: e.to_string() });
                    break;
                }
            }
        } else {
            Request::FindNodeDistance(bucket.index())
        };
        result.queries_sent += 1;
        match exchange(transport, remote, opts, &request) {
            Ok(Response::Nodes(entries)) => {
                for e in entries {
                    result.peers.entry(e.node_id).or_insert(e);
                }
            }
            Ok(other) => result
                .failures
                .push(QueryFailure { bucket: Some(bucket.index()), error: format!("unexpected reply {other:?}") }),
            Err(error) => result.failures.push(QueryFailure { bucket: Some(bucket.index()), error: describe(&error) }),
        }
    }
    result.complete = result.failures.is_empty();
    result
}
