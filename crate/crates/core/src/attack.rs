//! Sybil placement around a target CID.
//!
//! Identities are found by rejection sampling: candidate IDs are hashed from
//! `(seed, counter)` and kept when they land closer to the target than the
//! closest honest peer. One hash stands in for one keypair generation, so
//! `attempts` is the work measure; [`attack_cost`] turns it into dollars.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyspace::{derive_id_counter, xor_distance, Distance, Key256};
use crate::simnet::{NodeBehavior, SimError, SimNetwork};

/// Candidates tried before a bound is declared too tight.
pub const MAX_ATTEMPTS: u64 = 1_000_000_000;

const SYBIL_TAG: &[u8] = b"kadlab/sybil";

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("Sybils not found within {attempts} attempts; distance bound too tight")]
    BoundTooTight { attempts: u64 },
    #[error("distance bound is zero")]
    ZeroBound,
    #[error("network has no honest peer to undercut")]
    NoHonestPeer,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A set of generated Sybil IDs and the work it took.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SybilBatch {
    pub target: Key256,
    /// Sybils asked for. `ids` is shorter only when [`launch_attack`] ran
    /// into [`MAX_ATTEMPTS`].
    pub requested: usize,
    pub ids: Vec<Key256>,
    pub attempts: u64,
    /// Every id is strictly closer to `target` than this; `None` means no
    /// constraint (a bound of 2^256).
    pub distance_bound: Option<Distance>,
    pub seed: u64,
    /// Next unused candidate counter; maintenance continues from here.
    pub next_counter: u64,
}

impl SybilBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Fewer Sybils than requested were found within the attempt cap.
    pub fn is_partial(&self) -> bool {
        self.ids.len() < self.requested
    }

    /// One JSON object: target, ids, attempts, bound and seed.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("batch serializes")
    }
}

fn within(bound: Option<Distance>, id: Key256, target: Key256) -> bool {
    bound.is_none_or(|b| xor_distance(id, target) < b)
}

struct Draw {
    ids: Vec<Key256>,
    attempts: u64,
    next_counter: u64,
    capped: bool,
}

fn draw(
    target: Key256,
    count: usize,
    bound: Option<Distance>,
    seed: u64,
    mut counter: u64,
    taken: &BTreeSet<Key256>,
    cap: u64,
) -> Result<Draw, AttackError> {
    if bound.is_some_and(|b| b.is_zero()) {
        return Err(AttackError::ZeroBound);
    }
    let mut ids = Vec::with_capacity(count);
    let mut fresh = BTreeSet::new();
    let mut attempts = 0u64;
    let mut capped = false;
    while ids.len() < count {
        if attempts >= cap {
            capped = true;
            break;
        }
        let id = derive_id_counter(SYBIL_TAG, seed, counter);
        counter += 1;
        attempts += 1;
        if within(bound, id, target) && !taken.contains(&id) && fresh.insert(id) {
            ids.push(id);
        }
    }
    Ok(Draw {
        ids,
        attempts,
        next_counter: counter,
        capped,
    })
}

/// Generates `e` distinct IDs strictly closer to `target` than
/// `distance_bound` (`None` accepts every candidate). Fails once
/// [`MAX_ATTEMPTS`] candidates were tried.
pub fn generate_sybils(
    target: Key256,
    e: usize,
    distance_bound: Option<Distance>,
    seed: u64,
) -> Result<SybilBatch, AttackError> {
    let d = draw(target, e, distance_bound, seed, 0, &BTreeSet::new(), MAX_ATTEMPTS)?;
    if d.capped {
        return Err(AttackError::BoundTooTight { attempts: d.attempts });
    }
    Ok(SybilBatch {
        target,
        requested: e,
        ids: d.ids,
        attempts: d.attempts,
        distance_bound,
        seed,
        next_counter: d.next_counter,
    })
}

/// Distance from `target` to the closest honest node, online or not.
pub fn closest_honest_distance(net: &SimNetwork, target: Key256) -> Option<Distance> {
    net.honest_ids().map(|id| xor_distance(id, target)).min()
}

fn enlist(net: &mut SimNetwork, target: Key256, ids: &[Key256]) -> Result<(), SimError> {
    for &id in ids {
        let behavior = NodeBehavior::SybilCensoring {
            targets: [target].into(),
        };
        net.insert_node(id, behavior)?;
    }
    Ok(())
}

/// Inserts `e` censoring Sybils closer to `target` than every honest node.
/// With `e == 0` the network is left untouched.
///
/// If the closest honest node is so close that [`MAX_ATTEMPTS`] candidates
/// do not yield `e` Sybils, the ones found are deployed and the batch is
/// marked partial.
pub fn launch_attack(
    net: &mut SimNetwork,
    target: Key256,
    e: usize,
    seed: u64,
) -> Result<SybilBatch, AttackError> {
    launch_attack_capped(net, target, e, seed, MAX_ATTEMPTS)
}

/// [`launch_attack`] with an explicit attempt cap.
pub fn launch_attack_capped(
    net: &mut SimNetwork,
    target: Key256,
    e: usize,
    seed: u64,
    max_attempts: u64,
) -> Result<SybilBatch, AttackError> {
    let bound = closest_honest_distance(net, target).ok_or(AttackError::NoHonestPeer)?;
    let taken: BTreeSet<Key256> = net.ids().collect();
    let d = draw(target, e, Some(bound), seed, 0, &taken, max_attempts)?;
    if d.capped {
        warn!("attack on {target}: only {} of {e} Sybils within {} attempts", d.ids.len(), d.attempts);
    }
    enlist(net, target, &d.ids)?;
    Ok(SybilBatch {
        target,
        requested: e,
        ids: d.ids,
        attempts: d.attempts,
        distance_bound: Some(bound),
        seed,
        next_counter: d.next_counter,
    })
}

/// Restores an all-Sybil set of the `e` closest online peers after honest
/// nodes moved in. Returns how many Sybils were added.
///
/// If `s` of the batch's Sybils are still closer than the closest honest
/// intruder, `e - s` new ones are generated inside that distance and the
/// batch keeps exactly `e` ids.
pub fn maintain_attack(net: &mut SimNetwork, batch: &mut SybilBatch) -> Result<usize, AttackError> {
    let e = batch.requested;
    if e == 0 {
        return Ok(0);
    }
    let target = batch.target;
    let intruded = net
        .closest_online(&target, e)
        .iter()
        .any(|id| net.node(id).is_some_and(|n| n.behavior().is_honest()));
    if !intruded {
        return Ok(0);
    }
    let bound = closest_honest_distance(net, target).ok_or(AttackError::NoHonestPeer)?;
    // Sybils pushed beyond the new bound stay in the network but no longer
    // count towards the batch.
    batch
        .ids
        .retain(|id| xor_distance(*id, target) < bound && net.node(id).is_some_and(|n| n.is_online()));
    let missing = e - batch.ids.len();
    let taken: BTreeSet<Key256> = net.ids().collect();
    let d = draw(target, missing, Some(bound), batch.seed, batch.next_counter, &taken, MAX_ATTEMPTS)?;
    if d.capped {
        return Err(AttackError::BoundTooTight { attempts: d.attempts });
    }
    enlist(net, target, &d.ids)?;
    batch.ids.extend_from_slice(&d.ids);
    batch.attempts += d.attempts;
    batch.next_counter = d.next_counter;
    batch.distance_bound = Some(bound);
    Ok(d.ids.len())
}

/// Monetary model of an attack: generation plus hosting over warm-up and
/// effective time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackCostModel {
    /// Dollars per generation attempt.
    pub c_gen_per_attempt: f64,
    /// Hosting dollars per hour.
    pub c_oper: f64,
    /// Warm-up hours before the attack is effective.
    pub t_w: f64,
    /// Hours the attack is kept up.
    pub t_eff: f64,
}

impl Default for AttackCostModel {
    /// 0.16 $/h hosting and a 48 h warm-up; the per-attempt price puts 45
    /// Sybils in a 30 000-node network (about 45 · 30 001 attempts) at
    /// 0.0005 $.
    fn default() -> Self {
        Self {
            c_gen_per_attempt: 0.0005 / (45.0 * 30_001.0),
            c_oper: 0.16,
            t_w: 48.0,
            t_eff: 0.0,
        }
    }
}

pub fn attack_cost(model: &AttackCostModel, attempts: u64) -> f64 {
    attempts as f64 * model.c_gen_per_attempt + (model.t_w + model.t_eff) * model.c_oper
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyspace::common_prefix_length;
    use crate::simnet::SimConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn perfect(n: usize, seed: u64) -> SimNetwork {
        SimNetwork::build(n, seed, SimConfig::default()).unwrap()
    }

    #[test]
    fn unbounded_generation_keeps_every_candidate() {
        let b = generate_sybils(Key256::ZERO, 30, None, 1).unwrap();
        assert_eq!(b.attempts, 30);
        assert_eq!(b.ids.iter().collect::<BTreeSet<_>>().len(), 30);
    }

    #[test]
    fn generated_ids_respect_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let target = Key256::random(&mut rng);
            let bound = Distance::pow2(256 - 9);
            let b = generate_sybils(target, 10, Some(bound), seed).unwrap();
            assert!(b.ids.iter().all(|id| xor_distance(*id, target) < bound));
            assert!(b.ids.iter().all(|id| common_prefix_length(*id, target) >= 9));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let t = Key256::from_limbs([9, 9, 9, 9]);
        let a = generate_sybils(t, 5, Some(Distance::pow2(250)), 7).unwrap();
        let b = generate_sybils(t, 5, Some(Distance::pow2(250)), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_sybils(t, 5, Some(Distance::pow2(250)), 8).unwrap();
        assert_ne!(a.ids, c.ids);
    }

    #[test]
    fn capped_launch_deploys_what_it_found() {
        let mut net = perfect(200, 3);
        let target = Key256::from_limbs([5, 6, 7, 8]);
        // About 20 · 200 attempts are needed; 1000 yield roughly five.
        let b = launch_attack_capped(&mut net, target, 20, 11, 1000).unwrap();
        assert_eq!(b.attempts, 1000);
        assert_eq!(b.requested, 20);
        assert!(b.is_partial() && !b.is_empty(), "{}", b.len());
        assert_eq!(net.len(), 200 + b.len());
        let closest = net.closest_online(&target, b.len());
        assert_eq!(closest.iter().collect::<BTreeSet<_>>(), b.ids.iter().collect::<BTreeSet<_>>());
        let full = launch_attack(&mut perfect(200, 3), target, 20, 11).unwrap();
        assert!(!full.is_partial());
        assert_eq!(full.ids[..b.len()], b.ids[..]);
    }

    #[test]
    fn zero_bound_is_rejected() {
        assert!(matches!(
            generate_sybils(Key256::ZERO, 1, Some(Distance::ZERO), 0),
            Err(AttackError::ZeroBound)
        ));
    }

    #[test]
    fn attempts_follow_the_geometric_expectation() {
        // Each candidate lands inside the bound with probability bound/2^256.
        let bound = Distance::pow2(256 - 10);
        // 1600 geometric draws: relative sd of the mean is 1/40, allow 4 sd.
        let total: u64 = (0..80)
            .map(|seed| generate_sybils(Key256::ZERO, 20, Some(bound), seed).unwrap().attempts)
            .sum();
        let mean = total as f64 / 80.0;
        let expected = 20.0 * 1024.0;
        assert!((mean / expected - 1.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn launch_takes_over_the_closest_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..5 {
            let mut net = perfect(1000, seed);
            let target = Key256::random(&mut rng);
            let batch = launch_attack(&mut net, target, 20, seed).unwrap();
            assert_eq!(batch.len(), 20);
            let closest = net.get_closest_peers(&target);
            assert_eq!(closest.iter().collect::<BTreeSet<_>>(), batch.ids.iter().collect());
            let bound = batch.distance_bound.unwrap();
            assert!(batch.ids.iter().all(|id| xor_distance(*id, target) < bound));
        }
    }

    #[test]
    fn empty_attack_changes_nothing() {
        let mut net = perfect(300, 4);
        let before = net.clone();
        let batch = launch_attack(&mut net, Key256::ZERO, 0, 4).unwrap();
        assert!(batch.is_empty());
        assert_eq!(batch.attempts, 0);
        assert_eq!(net.ids().collect::<Vec<_>>(), before.ids().collect::<Vec<_>>());
    }

    #[test]
    fn provide_after_launch_is_censored() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = perfect(2000, 5);
        let ids: Vec<Key256> = net.ids().collect();
        let target = Key256::random(&mut rng);
        launch_attack(&mut net, target, 20, 5).unwrap();
        let report = net.provide(ids[0], target).unwrap();
        assert_eq!(report.honest_stored, 0);
        for d in &ids[1..30] {
            assert!(net.find_providers(*d, target).unwrap().is_empty());
        }
    }

    #[test]
    fn fewer_sybils_than_k_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = perfect(2000, 6);
        let ids: Vec<Key256> = net.ids().collect();
        let target = Key256::random(&mut rng);
        launch_attack(&mut net, target, 10, 6).unwrap();
        assert_eq!(net.provide(ids[0], target).unwrap().honest_stored, 10);
        for d in &ids[1..30] {
            assert_eq!(net.find_providers(*d, target).unwrap().len(), 1);
        }
    }

    #[test]
    fn maintenance_without_churn_is_idle() {
        let mut net = perfect(1000, 7);
        let mut batch = launch_attack(&mut net, Key256::from_limbs([1, 2, 3, 4]), 20, 7).unwrap();
        let before = batch.clone();
        assert_eq!(maintain_attack(&mut net, &mut batch).unwrap(), 0);
        assert_eq!(batch, before);
    }

    fn inject_honest(net: &mut SimNetwork, batch: &SybilBatch, count: usize, rng: &mut ChaCha8Rng) {
        // Honest newcomers closer than the median Sybil.
        let mut d: Vec<Distance> = batch.ids.iter().map(|id| xor_distance(*id, batch.target)).collect();
        d.sort();
        let prefix = 256 - d[d.len() / 2].bit_length() + 1;
        for _ in 0..count {
            let id = batch.target.splice_prefix(prefix, &Key256::random(rng));
            net.insert_node(id, NodeBehavior::Honest).unwrap();
        }
    }

    #[test]
    fn maintenance_pushes_out_newcomers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for count in [1, 5] {
            let mut net = perfect(1000, 8 + count as u64);
            let target = Key256::random(&mut rng);
            let mut batch = launch_attack(&mut net, target, 20, 8).unwrap();
            inject_honest(&mut net, &batch, count, &mut rng);
            let closest = net.closest_online(&target, 20);
            assert!(closest.iter().any(|id| net.node(id).unwrap().behavior().is_honest()));
            let added = maintain_attack(&mut net, &mut batch).unwrap();
            assert!(added >= 1);
            let closest = net.closest_online(&target, 20);
            assert!(closest.iter().all(|id| !net.node(id).unwrap().behavior().is_honest()));
            assert_eq!(maintain_attack(&mut net, &mut batch).unwrap(), 0);
        }
    }

    #[test]
    fn batch_exports_as_json() {
        let b = generate_sybils(Key256::ZERO, 2, Some(Distance::pow2(255)), 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&b.to_json()).unwrap();
        assert_eq!(v["target"].as_str().unwrap(), "0".repeat(64));
        assert_eq!(v["ids"].as_array().unwrap().len(), 2);
        assert_eq!(v["attempts"].as_u64().unwrap(), b.attempts);
        let back: SybilBatch = serde_json::from_str(&b.to_json()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn cost_formula() {
        let model = AttackCostModel {
            c_gen_per_attempt: 0.0005,
            c_oper: 0.16,
            t_w: 48.0,
            t_eff: 0.0,
        };
        assert!((attack_cost(&model, 1) - 7.6805).abs() < 1e-9);
        let zero = AttackCostModel {
            c_gen_per_attempt: 0.0,
            c_oper: 0.0,
            t_w: 0.0,
            t_eff: 0.0,
        };
        assert_eq!(attack_cost(&zero, 12345), 0.0);
        let slope = attack_cost(&AttackCostModel { t_eff: 11.0, ..model }, 1)
            - attack_cost(&AttackCostModel { t_eff: 10.0, ..model }, 1);
        assert!((slope - 0.16).abs() < 1e-12);
        let default = attack_cost(&AttackCostModel::default(), 45 * 30_001);
        assert!((default - 7.6805).abs() < 1e-9);
    }
}
