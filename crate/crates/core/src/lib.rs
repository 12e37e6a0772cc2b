//! A Kademlia DHT laboratory.
//!
//! The crate simulates a DHT at desk scale and implements a Sybil-based CID
//! censorship attack, a KL-divergence detector for it, and a region-based
//! query mitigation, together with an experiment harness that reproduces the
//! evaluation as seeded CSV sweeps.

pub mod attack;
pub mod detector;
pub mod estimator;
pub mod harness;
pub mod keyspace;
pub mod mitigation;
pub mod rng;
pub mod simnet;

#[cfg(test)]
mod testutil;

pub use keyspace::{common_prefix_length, derive_id, xor_distance, Distance, Key256};
pub use simnet::{ClosestPeers, NodeBehavior, ProviderRecord, SimConfig, SimError, SimNetwork};
