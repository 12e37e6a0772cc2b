use std::collections::{BTreeMap, BTreeSet};

use super::{Node, SimNetwork};
use crate::keyspace::{common_prefix_length, Distance, Key256, KEY_BITS};
use crate::rng::mix;

const BUCKET_SALT: u64 = 0x6275_636b_6574_7321;

impl SimNetwork {
    /// Index range of nodes whose IDs share the first `len` bits with `key`.
    fn prefix_range(&self, key: &Key256, len: u32) -> (usize, usize) {
        let lo = key.prefix_floor(len);
        let hi = key.prefix_ceil(len);
        let start = self.nodes.partition_point(|n| n.id < lo);
        let end = self.nodes.partition_point(|n| n.id <= hi);
        (start, end)
    }

    /// The `count` accepted nodes closest to `key`, ascending by distance.
    ///
    /// Nodes sharing `len` prefix bits with `key` are contiguous in ID order
    /// and all closer than any node outside that range, so it suffices to find
    /// the longest prefix whose range holds `count` accepted nodes and sort
    /// that range.
    pub(super) fn nearest<F>(&self, key: &Key256, count: usize, accept: F) -> Vec<Key256>
    where
        F: Fn(&Node) -> bool,
    {
        if count == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        // Longest prefix whose range holds at least `count` nodes at all.
        let (mut lo, mut hi) = (0u32, KEY_BITS);
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            let (s, e) = self.prefix_range(key, mid);
            if e - s >= count {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let mut len = lo;
        loop {
            let (s, e) = self.prefix_range(key, len);
            let mut found: Vec<(Distance, Key256)> = self.nodes[s..e]
                .iter()
                .filter(|n| accept(n))
                .map(|n| (n.id.distance(key), n.id))
                .collect();
            if found.len() >= count || len == 0 {
                found.sort_unstable();
                found.truncate(count);
                return found.into_iter().map(|(_, id)| id).collect();
            }
            len -= 1;
        }
    }

    /// What `responder` returns when asked for peers close to `key`.
    ///
    /// A responder sharing `b` bits with `key` answers from its bucket `b`,
    /// which covers the prefix `key[..=b]`. If that region holds at most k
    /// nodes the bucket knows all of them and the answer is the true k
    /// closest. Otherwise the bucket holds k members of the region chosen by a
    /// hash of (responder, b), a fixed per-node sample.
    fn routing_response(&self, responder: &Node, key: &Key256) -> Vec<Key256> {
        let k = self.config.k;
        if responder.behavior.censors(key) {
            return Vec::new();
        }
        let b = common_prefix_length(responder.id, *key);
        if b >= KEY_BITS - 1 {
            return self.closest_online(key, k);
        }
        let (s, e) = self.prefix_range(key, b + 1);
        if e - s <= k {
            return self.closest_online(key, k);
        }
        let base = mix(mix(responder.id.limbs()[0], responder.id.limbs()[3]), BUCKET_SALT ^ b as u64);
        let mut known: Vec<(Distance, Key256)> = (0..k as u64)
            .filter_map(|i| {
                let h = mix(base, i);
                let suffix = Key256::from_limbs([h, mix(h, 1), mix(h, 2), mix(h, 3)]);
                let probe = key.splice_prefix(b + 1, &suffix);
                self.nearest(&probe, 1, |n| n.online).into_iter().next()
            })
            .map(|id| (id.distance(key), id))
            .collect();
        known.sort_unstable();
        known.dedup();
        known.into_iter().map(|(_, id)| id).collect()
    }

    /// Iterative α-parallel walk from `origin` toward `key`. Returns every
    /// node the walk sent a request to.
    pub(super) fn walk(&self, origin: &Key256, key: &Key256, nonce: u64) -> BTreeSet<Key256> {
        let k = self.config.k;
        let alpha = self.config.alpha;
        let mut candidates: BTreeMap<Distance, Key256> = BTreeMap::new();
        let mut queried: BTreeSet<Key256> = BTreeSet::new();
        if let Some(node) = self.node(origin) {
            for id in self.routing_response(node, key) {
                if id != *origin {
                    candidates.insert(id.distance(key), id);
                }
            }
        }
        loop {
            let batch: Vec<Key256> = candidates
                .values()
                .take(k)
                .filter(|id| !queried.contains(*id))
                .take(alpha)
                .copied()
                .collect();
            if batch.is_empty() {
                break;
            }
            for id in batch {
                queried.insert(id);
                let node = self.node(&id).expect("candidates are network members");
                if !self.reachable(node, nonce) {
                    candidates.remove(&id.distance(key));
                    continue;
                }
                for peer in self.routing_response(node, key) {
                    if peer != *origin {
                        candidates.insert(peer.distance(key), peer);
                    }
                }
            }
        }
        queried
    }
}
