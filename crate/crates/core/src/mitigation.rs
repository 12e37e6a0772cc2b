//! Region-based queries.
//!
//! Instead of the k peers closest to a CID, which Sybils can occupy, a
//! provider or downloader talks to every peer whose ID shares at least
//! `min_cpl` leading bits with the CID. `min_cpl` is sized from the network
//! size estimate so the region holds about k honest peers; adding Sybils to
//! the region cannot push those honest peers out.
//!
//! The region is enumerated with plain `GetClosestPeers` calls: after a lookup
//! whose farthest result shares `c` bits with the key, every peer sharing more
//! than `c` bits is known, so the remaining part of the region is the subtree
//! that agrees on the first `c` bits and differs at bit `c`. That subtree is
//! enumerated recursively and `c` is decreased until it drops below
//! `min_cpl`. Each step strictly decreases `c`, so the walk terminates even
//! when lookups are incomplete.

use std::collections::BTreeSet;

use log::warn;

use crate::keyspace::{common_prefix_length, Key256, KEY_BITS};
use crate::simnet::{ClosestPeers, ProvideReport, ProviderRecord, SimError, SimNetwork};

/// Lookups a single region query may issue before giving up.
pub const DEFAULT_LOOKUP_BUDGET: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionConfig {
    /// Bits subtracted from the sized `min_cpl`, doubling the region per bit.
    pub margin: u32,
    pub lookup_budget: usize,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            margin: 0,
            lookup_budget: DEFAULT_LOOKUP_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionQueryResult {
    /// Every peer found with `cpl(peer, key) >= min_cpl_used`.
    pub peers: BTreeSet<Key256>,
    /// `GetClosestPeers` calls issued.
    pub lookup_count: usize,
    pub min_cpl_used: u32,
    /// The lookup budget ran out; `peers` may be incomplete.
    pub truncated: bool,
}

struct Walk<'a, P: ?Sized> {
    view: &'a mut P,
    found: BTreeSet<Key256>,
    lookups: usize,
    budget: usize,
    truncated: bool,
}

impl<P: ClosestPeers + ?Sized> Walk<'_, P> {
    fn find(&mut self, key: Key256, min_cpl: u32) {
        if self.lookups >= self.budget {
            self.truncated = true;
            return;
        }
        let peers = self.view.closest_peers(&key);
        self.lookups += 1;
        let Some(mut cpl) = peers.iter().map(|p| common_prefix_length(*p, key)).min() else {
            return;
        };
        self.found.extend(peers);
        // A peer equal to the key would give cpl = 256; there is no bit 256
        // to flip, and every other peer is already farther away.
        cpl = cpl.min(KEY_BITS - 1);
        while cpl >= min_cpl {
            self.find(key.with_bit_flipped(cpl), cpl + 1);
            if cpl == 0 {
                break;
            }
            cpl -= 1;
        }
    }
}

/// All peers sharing at least `min_cpl` leading bits with `key`, found with
/// `GetClosestPeers` calls only. Exact when lookups are exact.
pub fn find_by_cpl<P: ClosestPeers + ?Sized>(
    view: &mut P,
    key: Key256,
    min_cpl: u32,
    lookup_budget: usize,
) -> RegionQueryResult {
    assert!(min_cpl <= KEY_BITS, "min_cpl must be in 0..=256");
    let mut walk = Walk {
        view,
        found: BTreeSet::new(),
        lookups: 0,
        budget: lookup_budget.max(1),
        truncated: false,
    };
    walk.find(key, min_cpl);
    if walk.truncated {
        warn!(
            "region query for {key} stopped after {} lookups; result may be incomplete",
            walk.lookups
        );
    }
    let mut peers = walk.found;
    peers.retain(|p| common_prefix_length(*p, key) >= min_cpl);
    RegionQueryResult {
        peers,
        lookup_count: walk.lookups,
        min_cpl_used: min_cpl,
        truncated: walk.truncated,
    }
}

/// `floor(log2(n_hat / k)) - margin`, saturating at 0: the longest prefix
/// whose region is expected to hold at least k of `n_hat` uniform peers.
pub fn choose_min_cpl(n_hat: f64, k: usize, margin: u32) -> u32 {
    assert!(k > 0);
    let ratio = n_hat / k as f64;
    let mut bits = 0u32;
    while bits < KEY_BITS && 2f64.powi(bits as i32 + 1) <= ratio {
        bits += 1;
    }
    bits.saturating_sub(margin)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionProvideReport {
    pub provide: ProvideReport,
    pub region: RegionQueryResult,
}

/// Sends a provider record for `cid` to every peer in its region.
pub fn region_provide(
    net: &mut SimNetwork,
    provider: Key256,
    cid: Key256,
    n_hat: f64,
    config: RegionConfig,
) -> Result<RegionProvideReport, SimError> {
    if !net.contains(&provider) {
        return Err(SimError::UnknownNode(provider));
    }
    let min_cpl = choose_min_cpl(n_hat, net.k(), config.margin);
    let region = find_by_cpl(net, cid, min_cpl, config.lookup_budget);
    let peers: Vec<Key256> = region.peers.iter().copied().collect();
    let provide = net.provide_to(provider, cid, &peers)?;
    Ok(RegionProvideReport { provide, region })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionFindResult {
    pub records: BTreeSet<ProviderRecord>,
    pub region: RegionQueryResult,
}

/// Asks every peer in the region of `cid` for provider records.
pub fn region_find_providers(
    net: &mut SimNetwork,
    downloader: Key256,
    cid: Key256,
    n_hat: f64,
    config: RegionConfig,
) -> Result<RegionFindResult, SimError> {
    if !net.contains(&downloader) {
        return Err(SimError::UnknownNode(downloader));
    }
    let min_cpl = choose_min_cpl(n_hat, net.k(), config.margin);
    let region = find_by_cpl(net, cid, min_cpl, config.lookup_budget);
    let peers: Vec<Key256> = region.peers.iter().copied().collect();
    let records = net.query_records(&peers, &cid);
    Ok(RegionFindResult { records, region })
}
