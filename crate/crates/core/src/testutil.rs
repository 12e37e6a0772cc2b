//! Fixtures shared by unit tests.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::estimator::{sample_network, NetsizeEstimator};
use crate::keyspace::{common_prefix_length, xor_distance, Key256};
use crate::simnet::{NodeBehavior, SimConfig, SimNetwork};

/// Brute-force region: every online peer sharing `min_cpl` bits with `key`.
pub fn brute_region(net: &SimNetwork, key: &Key256, min_cpl: u32) -> BTreeSet<Key256> {
    net.nodes()
        .filter(|n| n.is_online() && common_prefix_length(n.id(), *key) >= min_cpl)
        .map(|n| n.id())
        .collect()
}

/// A perfect network and its size estimate from 256 lookups.
pub fn network_with_estimate(n: usize, seed: u64) -> (SimNetwork, f64) {
    let mut net = SimNetwork::build(n, seed, SimConfig::default()).unwrap();
    let mut est = NetsizeEstimator::new(net.k());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    sample_network(&mut net, &mut est, 256, &mut rng).unwrap();
    (net, est.estimate().unwrap().n_hat)
}

/// Inserts `e` censoring Sybils, each strictly closer to `target` than any
/// peer already present.
pub fn plant_sybils<R: Rng>(net: &mut SimNetwork, target: Key256, e: usize, rng: &mut R) {
    let closest = xor_distance(net.closest_online(&target, 1)[0], target);
    let prefix = 256 - closest.bit_length() + 1;
    for _ in 0..e {
        let id = target.splice_prefix(prefix, &Key256::random(rng));
        let sybil = NodeBehavior::SybilCensoring { targets: [target].into() };
        net.insert_node(id, sybil).unwrap();
    }
}
