//! Deterministic in-memory Kademlia DHT.
//!
//! Lookups are answered by a global k-nearest oracle over the sorted node set,
//! optionally perturbed by two knobs: `p_offline` (a node is unreachable for
//! the current query) and `p_miss` (a node is silently left out of a lookup
//! result). Both are re-drawn for every query from a counter-based stream, so
//! a network replays bit-identically from its seed and operation sequence.
//!
//! Per-node routing tables are not materialized. `find_providers` models the
//! nodes contacted on the way to a key with lazily derived bucket views; see
//! [`SimNetwork::find_providers`].

mod lookup;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::keyspace::{derive_id_counter, Key256};
use crate::rng::{mix, splitmix64, unit};

pub use snapshot::SnapshotLine;

/// Replication and lookup width.
pub const DEFAULT_K: usize = 20;
/// Lookup parallelism.
pub const DEFAULT_ALPHA: usize = 3;
pub const HOUR: u64 = 3600;
/// Provider records live for 48 hours unless re-provided.
pub const DEFAULT_RECORD_TTL: u64 = 48 * HOUR;

const NODE_TAG: &[u8] = b"kadlab/node";
const SALT_OFFLINE: u64 = 0x6f66_666c_696e_6521;
const SALT_MISS: u64 = 0x6d69_7373_6564_2121;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("network needs at least k={k} nodes, got {n}")]
    TooFewNodes { n: usize, k: usize },
    #[error("node {0} is not part of the network")]
    UnknownNode(Key256),
    #[error("node {0} already exists")]
    DuplicateNode(Key256),
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
}

/// Tunables of a simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub k: usize,
    pub alpha: usize,
    /// Probability that a node is unreachable for any one query.
    pub p_offline: f64,
    /// Probability that a node is omitted from any one lookup result.
    pub p_miss: f64,
    /// Provider record lifetime in virtual seconds.
    pub record_ttl: u64,
    /// Re-provide period in virtual seconds; `None` disables re-providing.
    pub reprovide_interval: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            p_offline: 0.0,
            p_miss: 0.0,
            record_ttl: DEFAULT_RECORD_TTL,
            reprovide_interval: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.alpha == 0 {
            return bad("alpha must be positive".into());
        }
        for (name, p) in [("p_offline", self.p_offline), ("p_miss", self.p_miss)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name}={p} is not a probability"));
            }
        }
        if self.reprovide_interval == Some(0) {
            return bad("reprovide interval must be positive".into());
        }
        Ok(())
    }

    /// No per-query unavailability and no lookup omissions.
    pub fn is_perfect(&self) -> bool {
        self.p_offline == 0.0 && self.p_miss == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeBehavior {
    Honest,
    /// Drops provider records for the target CIDs and answers every request
    /// about them with an empty message. Honest for every other key.
    SybilCensoring { targets: BTreeSet<Key256> },
}

impl NodeBehavior {
    pub fn censors(&self, cid: &Key256) -> bool {
        match self {
            NodeBehavior::Honest => false,
            NodeBehavior::SybilCensoring { targets } => targets.contains(cid),
        }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, NodeBehavior::Honest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProviderRecord {
    pub cid: Key256,
    pub provider: Key256,
    /// Virtual time (seconds) at which the record stops being served.
    pub expires_at: u64,
}

impl ProviderRecord {
    pub fn is_live(&self, now: u64) -> bool {
        now < self.expires_at
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    id: Key256,
    behavior: NodeBehavior,
    online: bool,
    // cid -> provider -> expiry
    store: BTreeMap<Key256, BTreeMap<Key256, u64>>,
}

impl Node {
    fn new(id: Key256, behavior: NodeBehavior) -> Self {
        Self {
            id,
            behavior,
            online: true,
            store: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> Key256 {
        self.id
    }

    pub fn behavior(&self) -> &NodeBehavior {
        &self.behavior
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    /// Stores the record unless this node censors its CID. Returns whether it
    /// was kept.
    fn accept(&mut self, record: ProviderRecord) -> bool {
        if self.behavior.censors(&record.cid) {
            return false;
        }
        let expiry = self
            .store
            .entry(record.cid)
            .or_default()
            .entry(record.provider)
            .or_insert(record.expires_at);
        *expiry = (*expiry).max(record.expires_at);
        true
    }

    /// Live records this node would serve for `cid` at time `now`.
    pub fn records_for(&self, cid: &Key256, now: u64) -> Vec<ProviderRecord> {
        if self.behavior.censors(cid) {
            return Vec::new();
        }
        self.store
            .get(cid)
            .into_iter()
            .flat_map(|providers| providers.iter())
            .filter(|(_, &exp)| now < exp)
            .map(|(&provider, &expires_at)| ProviderRecord {
                cid: *cid,
                provider,
                expires_at,
            })
            .collect()
    }

    /// Every stored record, expired or not, in (cid, provider) order.
    pub fn stored_records(&self) -> impl Iterator<Item = ProviderRecord> + '_ {
        self.store.iter().flat_map(|(&cid, providers)| {
            providers.iter().map(move |(&provider, &expires_at)| ProviderRecord {
                cid,
                provider,
                expires_at,
            })
        })
    }

    fn purge(&mut self, now: u64) {
        self.store.retain(|_, providers| {
            providers.retain(|_, exp| now < *exp);
            !providers.is_empty()
        });
    }
}

/// Outcome of storing one provider record at a set of resolvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProvideReport {
    /// Resolvers the record was sent to.
    pub contacted: usize,
    /// Resolvers that kept the record, honest or not.
    pub stored: usize,
    /// Honest resolvers that now hold the record.
    pub honest_stored: usize,
}

/// Anything that can answer a `GetClosestPeers` query.
pub trait ClosestPeers {
    /// Replication width k of the DHT.
    fn replication(&self) -> usize;

    /// Up to k peer IDs close to `key`, ascending by XOR distance.
    fn closest_peers(&mut self, key: &Key256) -> Vec<Key256>;
}

#[derive(Debug, Clone)]
pub struct SimNetwork {
    // Sorted by id.
    nodes: Vec<Node>,
    clock: u64,
    seed: u64,
    config: SimConfig,
    queries: u64,
    // (provider, cid) -> time of last (re-)provide
    provides: BTreeMap<(Key256, Key256), u64>,
    reprovides: u64,
}

impl SimNetwork {
    /// `n` honest nodes with IDs `derive_id("kadlab/node" || seed || counter)`.
    pub fn build(n: usize, seed: u64, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        if n < config.k {
            return Err(SimError::TooFewNodes { n, k: config.k });
        }
        let mut ids: Vec<Key256> = (0..n as u64)
            .map(|c| derive_id_counter(NODE_TAG, seed, c))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n, "hash collision while deriving node IDs");
        Ok(Self {
            nodes: ids
                .into_iter()
                .map(|id| Node::new(id, NodeBehavior::Honest))
                .collect(),
            clock: 0,
            seed,
            config,
            queries: 0,
            provides: BTreeMap::new(),
            reprovides: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Current virtual time in seconds.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of `GetClosestPeers`-style queries issued so far.
    pub fn query_count(&self) -> u64 {
        self.queries
    }

    /// Number of re-provide operations triggered by the clock.
    pub fn reprovide_count(&self) -> u64 {
        self.reprovides
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = Key256> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn honest_ids(&self) -> impl Iterator<Item = Key256> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.behavior.is_honest())
            .map(|n| n.id)
    }

    fn position(&self, id: &Key256) -> Result<usize, usize> {
        self.nodes.binary_search_by(|n| n.id.cmp(id))
    }

    pub fn node(&self, id: &Key256) -> Option<&Node> {
        self.position(id).ok().map(|i| &self.nodes[i])
    }

    pub fn contains(&self, id: &Key256) -> bool {
        self.position(id).is_ok()
    }

    pub fn insert_node(&mut self, id: Key256, behavior: NodeBehavior) -> Result<(), SimError> {
        match self.position(&id) {
            Ok(_) => Err(SimError::DuplicateNode(id)),
            Err(at) => {
                self.nodes.insert(at, Node::new(id, behavior));
                Ok(())
            }
        }
    }

    pub fn remove_node(&mut self, id: &Key256) -> Result<Node, SimError> {
        let at = self.position(id).map_err(|_| SimError::UnknownNode(*id))?;
        Ok(self.nodes.remove(at))
    }

    /// Marks a node as permanently (un)reachable until changed again.
    pub fn set_online(&mut self, id: &Key256, online: bool) -> Result<(), SimError> {
        let at = self.position(id).map_err(|_| SimError::UnknownNode(*id))?;
        self.nodes[at].online = online;
        Ok(())
    }

    /// Adds `cid` to the censored set of a node, turning it into a Sybil.
    pub fn add_censored_target(&mut self, id: &Key256, cid: Key256) -> Result<(), SimError> {
        let at = self.position(id).map_err(|_| SimError::UnknownNode(*id))?;
        let node = &mut self.nodes[at];
        match &mut node.behavior {
            NodeBehavior::Honest => {
                node.behavior = NodeBehavior::SybilCensoring {
                    targets: BTreeSet::from([cid]),
                }
            }
            NodeBehavior::SybilCensoring { targets } => {
                targets.insert(cid);
            }
        }
        Ok(())
    }

    fn next_nonce(&mut self) -> u64 {
        self.queries += 1;
        mix(self.seed, self.queries)
    }

    /// Whether `node` answers during the query identified by `nonce`.
    fn reachable(&self, node: &Node, nonce: u64) -> bool {
        node.online
            && (self.config.p_offline == 0.0
                || unit(peer_draw(nonce, SALT_OFFLINE, &node.id)) >= self.config.p_offline)
    }

    fn listed(&self, node: &Node, nonce: u64) -> bool {
        self.reachable(node, nonce)
            && (self.config.p_miss == 0.0
                || unit(peer_draw(nonce, SALT_MISS, &node.id)) >= self.config.p_miss)
    }

    fn closest_for_nonce(&self, key: &Key256, nonce: u64) -> Vec<Key256> {
        self.nearest(key, self.config.k, |n| self.listed(n, nonce))
    }

    /// The k online peers closest to `key`, without per-query noise.
    ///
    /// This is the view of an omniscient observer, used for attack planning
    /// and ground truth.
    pub fn closest_online(&self, key: &Key256, count: usize) -> Vec<Key256> {
        self.nearest(key, count, |n| n.online)
    }

    /// `GetClosestPeers(key)`: up to k peers ascending by distance. In perfect
    /// mode this is exactly the k nearest online nodes.
    pub fn get_closest_peers(&mut self, key: &Key256) -> Vec<Key256> {
        let nonce = self.next_nonce();
        self.closest_for_nonce(key, nonce)
    }

    fn store_at(&mut self, peers: &[Key256], record: ProviderRecord) -> ProvideReport {
        let mut report = ProvideReport::default();
        for peer in peers {
            if let Ok(at) = self.position(peer) {
                report.contacted += 1;
                let node = &mut self.nodes[at];
                if node.accept(record) {
                    report.stored += 1;
                    if node.behavior.is_honest() {
                        report.honest_stored += 1;
                    }
                }
            }
        }
        report
    }

    fn new_record(&self, provider: Key256, cid: Key256) -> ProviderRecord {
        ProviderRecord {
            cid,
            provider,
            expires_at: self.clock + self.config.record_ttl,
        }
    }

    /// Publishes a provider record for `cid` at the peers returned by
    /// `GetClosestPeers(cid)`.
    pub fn provide(&mut self, provider: Key256, cid: Key256) -> Result<ProvideReport, SimError> {
        if !self.contains(&provider) {
            return Err(SimError::UnknownNode(provider));
        }
        let resolvers = self.get_closest_peers(&cid);
        let record = self.new_record(provider, cid);
        self.provides.insert((provider, cid), self.clock);
        Ok(self.store_at(&resolvers, record))
    }

    /// Sends a fresh record for `cid` to an explicit set of peers. Peers that
    /// are not in the network are skipped.
    pub fn provide_to(
        &mut self,
        provider: Key256,
        cid: Key256,
        peers: &[Key256],
    ) -> Result<ProvideReport, SimError> {
        if !self.contains(&provider) {
            return Err(SimError::UnknownNode(provider));
        }
        let record = self.new_record(provider, cid);
        Ok(self.store_at(peers, record))
    }

    /// Asks each of `peers` for records on `cid` in one query round. Peers
    /// unreachable in that round answer nothing.
    pub fn query_records(&mut self, peers: &[Key256], cid: &Key256) -> BTreeSet<ProviderRecord> {
        let nonce = self.next_nonce();
        self.collect_records(peers.iter(), cid, nonce)
    }

    fn collect_records<'a>(
        &self,
        peers: impl Iterator<Item = &'a Key256>,
        cid: &Key256,
        nonce: u64,
    ) -> BTreeSet<ProviderRecord> {
        let mut out = BTreeSet::new();
        for peer in peers {
            if let Some(node) = self.node(peer) {
                if self.reachable(node, nonce) {
                    out.extend(node.records_for(cid, self.clock));
                }
            }
        }
        out
    }

    /// `FindProviders(cid)` issued by `downloader`.
    ///
    /// The walk starts from the downloader's own bucket view and queries, α at
    /// a time, the closest not-yet-queried candidates until the k closest
    /// known candidates have all been queried. Every contacted node is asked
    /// for records, and so is the `GetClosestPeers(cid)` result of the same
    /// query round, so the terminal set matches the lookup oracle.
    pub fn find_providers(
        &mut self,
        downloader: Key256,
        cid: Key256,
    ) -> Result<BTreeSet<ProviderRecord>, SimError> {
        if !self.contains(&downloader) {
            return Err(SimError::UnknownNode(downloader));
        }
        let nonce = self.next_nonce();
        let terminal = self.closest_for_nonce(&cid, nonce);
        let path = self.walk(&downloader, &cid, nonce);
        let contacted: BTreeSet<Key256> = path.into_iter().chain(terminal).collect();
        Ok(self.collect_records(contacted.iter(), &cid, nonce))
    }

    /// Advances virtual time, re-providing due records and purging expired
    /// ones.
    pub fn advance_clock(&mut self, dt: u64) {
        let target = self.clock.saturating_add(dt);
        if let Some(interval) = self.config.reprovide_interval {
            while let Some(due) = self.provides.values().map(|&t| t + interval).min() {
                if due > target {
                    break;
                }
                self.clock = due;
                self.purge();
                let batch: Vec<(Key256, Key256)> = self
                    .provides
                    .iter()
                    .filter(|(_, &t)| t + interval == due)
                    .map(|(&pc, _)| pc)
                    .collect();
                for (provider, cid) in batch {
                    match self.node(&provider) {
                        Some(node) if node.online => {
                            self.reprovides += 1;
                            self.provide(provider, cid).expect("provider present");
                        }
                        _ => {
                            self.provides.remove(&(provider, cid));
                        }
                    }
                }
            }
        }
        self.clock = target;
        self.purge();
    }

    fn purge(&mut self) {
        let now = self.clock;
        for node in &mut self.nodes {
            node.purge(now);
        }
    }

    /// Honest nodes currently holding a live record for `cid`.
    pub fn honest_holders(&self, cid: &Key256) -> Vec<Key256> {
        self.nodes
            .iter()
            .filter(|n| n.behavior.is_honest() && !n.records_for(cid, self.clock).is_empty())
            .map(|n| n.id)
            .collect()
    }
}

impl ClosestPeers for SimNetwork {
    fn replication(&self) -> usize {
        self.config.k
    }

    fn closest_peers(&mut self, key: &Key256) -> Vec<Key256> {
        self.get_closest_peers(key)
    }
}

fn peer_draw(nonce: u64, salt: u64, id: &Key256) -> u64 {
    let [a, b, c, d] = id.limbs();
    let h = mix(mix(nonce, salt), a) ^ splitmix64(b ^ c.rotate_left(21) ^ d.rotate_left(42));
    splitmix64(h)
}
