//! Multi-protocol peer-to-peer network crawler and measurement toolkit.
//!
//! The crate enumerates blockchain network participants through each
//! protocol's own discovery mechanism, probes their liveness, classifies
//! Internet-scan responses, splits co-resident networks apart, and computes
//! churn and decentralization analytics over the resulting daily series.
//!
//! Everything can be driven against [`simnet`], a deterministic in-process
//! network that exposes its ground truth for comparison.
//!
//! Module map:
//!
//! * [`wire_bitcoin`] - Bitcoin-family framing, `version`, `getaddr`/`addr`, `ping`/`pong`.
//! * [`kademlia`] - node ids, k-bucket tables, FIND_NODE dialects, preimage crafting.
//! * [`crawl`] - breadth-first crawl engine and discovery strategies.
//! * [`liveness`] - TCP / protocol / crawl pings and the daily "active" fold.
//! * [`scan`] - scan probe payloads and response classification.
//! * [`netlabel`] - labeling of networks that share one discovery layer.
//! * [`store`] - on-disk day store and enrichment joins.
//! * [`metrics`] - retention, streaks, HHI, geo shares, peer-table stats, coverage, overlap.
//! * [`simnet`] - deterministic simulated network.
//! * [`pipeline`] - end-to-end simulation run that wires all of the above.

pub mod crawl;
pub mod exec;
pub mod kademlia;
pub mod liveness;
pub mod metrics;
pub mod netlabel;
pub mod peer;
pub mod pipeline;
pub mod profile;
pub mod scan;
pub mod simnet;
pub mod store;
pub mod transport;
pub mod wire_bitcoin;

pub use exec::Execution;
pub use profile::{Family, Magic, NetworkProfile, ProfileConfig};
