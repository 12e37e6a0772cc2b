use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{attack_cost, closest_honest_distance, generate_sybils, launch_attack, AttackCostModel};
use crate::detector::Detector;
use crate::estimator::{sample_network, NetsizeEstimator};
use crate::keyspace::{common_prefix_length, Key256};
use crate::mitigation::{choose_min_cpl, find_by_cpl, region_find_providers, region_provide, RegionConfig};
use crate::rng::mix;
use crate::simnet::SimNetwork;

use super::config::{hours, ScenarioConfig, ScenarioKind};
use super::report::Cell;
use super::HarnessError;

/// Fixed inputs of one trial.
pub(crate) struct Trial {
    pub n: usize,
    pub e: usize,
    pub index: usize,
    pub master_seed: u64,
    pub sub_seed: u64,
}

impl Trial {
    fn lead(&self) -> Vec<Cell> {
        vec![
            self.n.into(),
            self.e.into(),
            self.index.into(),
            self.master_seed.into(),
            self.sub_seed.into(),
        ]
    }
}

const LEAD: [&str; 5] = ["n", "e", "trial", "master_seed", "sub_seed"];

pub(crate) fn columns(kind: ScenarioKind) -> Vec<&'static str> {
    use ScenarioKind::*;
    let tail: &[&str] = match kind {
        AttackEffectiveness => &["target", "sybils", "attempts", "honest_holders", "queries", "failures", "a_eff"],
        DetectionRoc | DetectionVsNetsize => &["threshold", "target", "sybils", "n_hat", "kl", "flagged"],
        MitigationEffectiveness => &[
            "target",
            "sybils",
            "n_hat",
            "min_cpl",
            "detected",
            "honest_resolvers",
            "region_size",
            "provide_lookups",
            "find_lookups",
            "truncated",
            "queries",
            "successes",
            "m_eff",
        ],
        MitigationOverhead => &[
            "target",
            "sybils",
            "n_hat",
            "min_cpl",
            "lookup_count",
            "region_size",
            "honest_in_region",
            "truncated",
        ],
        SybilGenCost => &[
            "target_index",
            "target",
            "distance_bound",
            "attempts",
            "expected_attempts",
            "attempt_ratio",
            "cost_usd",
        ],
        NetsizeAccuracy => &["samples", "n_hat", "rel_error"],
    };
    LEAD.iter().chain(tail).copied().collect()
}

fn build(cfg: &ScenarioConfig, t: &Trial) -> Result<SimNetwork, HarnessError> {
    Ok(SimNetwork::build(t.n, t.sub_seed, cfg.sim_config())?)
}

fn estimate(cfg: &ScenarioConfig, net: &mut SimNetwork, rng: &mut ChaCha8Rng) -> Result<NetsizeEstimator, HarnessError> {
    let mut est = NetsizeEstimator::with_window(cfg.k, Some(cfg.samples));
    sample_network(net, &mut est, cfg.samples, rng).map_err(|e| HarnessError::Run(e.to_string()))?;
    Ok(est)
}

/// A provider followed by `downloaders` distinct peers, all honest.
fn pick_peers(net: &SimNetwork, count: usize, rng: &mut ChaCha8Rng) -> Vec<Key256> {
    let ids: Vec<Key256> = net.honest_ids().collect();
    sample(rng, ids.len(), count).into_iter().map(|i| ids[i]).collect()
}

pub(crate) fn run_trial(cfg: &ScenarioConfig, t: &Trial) -> Result<Vec<Vec<Cell>>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(t.sub_seed);
    match cfg.scenario {
        ScenarioKind::AttackEffectiveness => attack_effectiveness(cfg, t, &mut rng),
        ScenarioKind::DetectionRoc | ScenarioKind::DetectionVsNetsize => detection(cfg, t, &mut rng),
        ScenarioKind::MitigationEffectiveness => mitigation_effectiveness(cfg, t, &mut rng),
        ScenarioKind::MitigationOverhead => mitigation_overhead(cfg, t, &mut rng),
        ScenarioKind::SybilGenCost => sybil_gen_cost(cfg, t, &mut rng),
        ScenarioKind::NetsizeAccuracy => netsize_accuracy(cfg, t, &mut rng),
    }
}

fn attack_effectiveness(cfg: &ScenarioConfig, t: &Trial, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Cell>>, HarnessError> {
    let mut net = build(cfg, t)?;
    let peers = pick_peers(&net, 1 + cfg.downloaders, rng);
    let provider = peers[0];
    let target = Key256::random(rng);
    if cfg.provide_first {
        net.provide(provider, target)?;
    }
    let batch = launch_attack(&mut net, target, t.e, t.sub_seed)?;
    if !cfg.provide_first {
        net.provide(provider, target)?;
    }
    net.advance_clock(hours(cfg.wait_hours));
    let honest_holders = net.honest_holders(&target).len();
    let mut failures = 0usize;
    for d in &peers[1..] {
        let records = net.find_providers(*d, target)?;
        if !records.iter().any(|r| r.provider == provider) {
            failures += 1;
        }
    }
    let queries = cfg.downloaders;
    let mut row = t.lead();
    row.extend([
        target.to_hex().into(),
        batch.len().into(),
        batch.attempts.into(),
        honest_holders.into(),
        queries.into(),
        failures.into(),
        (failures as f64 / queries as f64).into(),
    ]);
    Ok(vec![row])
}

fn detection(cfg: &ScenarioConfig, t: &Trial, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Cell>>, HarnessError> {
    let mut net = build(cfg, t)?;
    let est = estimate(cfg, &mut net, rng)?;
    let target = Key256::random(rng);
    let batch = launch_attack(&mut net, target, t.e, t.sub_seed)?;
    let verdict = Detector::new(cfg.thresholds[0])
        .detect(&mut net, &est, target)
        .map_err(|e| HarnessError::Run(e.to_string()))?;
    Ok(cfg
        .thresholds
        .iter()
        .map(|&threshold| {
            let mut row = t.lead();
            row.extend([
                threshold.into(),
                target.to_hex().into(),
                batch.len().into(),
                verdict.n_hat_used.into(),
                verdict.kl.into(),
                (verdict.kl > threshold).into(),
            ]);
            row
        })
        .collect())
}

fn mitigation_effectiveness(
    cfg: &ScenarioConfig,
    t: &Trial,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Cell>>, HarnessError> {
    let mut net = build(cfg, t)?;
    let est = estimate(cfg, &mut net, rng)?;
    let peers = pick_peers(&net, 1 + cfg.downloaders, rng);
    let provider = peers[0];
    let target = Key256::random(rng);
    let batch = launch_attack(&mut net, target, t.e, t.sub_seed)?;
    let mut detector = Detector::new(cfg.thresholds[0]);
    let verdict = detector
        .detect(&mut net, &est, target)
        .map_err(|e| HarnessError::Run(e.to_string()))?;
    let region = RegionConfig {
        margin: cfg.margin,
        lookup_budget: cfg.lookup_budget,
    };
    let n_hat = verdict.n_hat_used;
    let provided = region_provide(&mut net, provider, target, n_hat, region)?;
    let mut successes = 0usize;
    let mut find_lookups = 0usize;
    let mut truncated = provided.region.truncated;
    for d in &peers[1..] {
        let found = region_find_providers(&mut net, *d, target, n_hat, region)?;
        find_lookups += found.region.lookup_count;
        truncated |= found.region.truncated;
        if found.records.iter().any(|r| r.provider == provider) {
            successes += 1;
        }
    }
    let queries = cfg.downloaders;
    let mut row = t.lead();
    row.extend([
        target.to_hex().into(),
        batch.len().into(),
        n_hat.into(),
        provided.region.min_cpl_used.into(),
        verdict.attacked.into(),
        provided.provide.honest_stored.into(),
        provided.region.peers.len().into(),
        provided.region.lookup_count.into(),
        find_lookups.into(),
        truncated.into(),
        queries.into(),
        successes.into(),
        (successes as f64 / queries as f64).into(),
    ]);
    Ok(vec![row])
}

fn mitigation_overhead(cfg: &ScenarioConfig, t: &Trial, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Cell>>, HarnessError> {
    let mut net = build(cfg, t)?;
    let est = estimate(cfg, &mut net, rng)?;
    let n_hat = est.estimate().map_err(|e| HarnessError::Run(e.to_string()))?.n_hat;
    let target = Key256::random(rng);
    let batch = launch_attack(&mut net, target, t.e, t.sub_seed)?;
    let min_cpl = choose_min_cpl(n_hat, cfg.k, cfg.margin);
    let r = find_by_cpl(&mut net, target, min_cpl, cfg.lookup_budget);
    let honest = net
        .honest_ids()
        .filter(|id| common_prefix_length(*id, target) >= min_cpl)
        .count();
    let mut row = t.lead();
    row.extend([
        target.to_hex().into(),
        batch.len().into(),
        n_hat.into(),
        min_cpl.into(),
        r.lookup_count.into(),
        r.peers.len().into(),
        honest.into(),
        r.truncated.into(),
    ]);
    Ok(vec![row])
}

fn sybil_gen_cost(cfg: &ScenarioConfig, t: &Trial, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Cell>>, HarnessError> {
    let net = build(cfg, t)?;
    let model = AttackCostModel::default();
    let mut rows = Vec::with_capacity(cfg.targets);
    for ti in 0..cfg.targets {
        let target = Key256::random(rng);
        let bound = closest_honest_distance(&net, target).ok_or(crate::attack::AttackError::NoHonestPeer)?;
        let batch = generate_sybils(target, t.e, Some(bound), mix(t.sub_seed, ti as u64))?;
        // Each candidate qualifies with probability bound / 2^256.
        let expected = t.e as f64 / bound.to_unit();
        let mut row = t.lead();
        row.extend([
            ti.into(),
            target.to_hex().into(),
            bound.to_string().into(),
            batch.attempts.into(),
            expected.into(),
            (batch.attempts as f64 / expected).into(),
            attack_cost(&model, batch.attempts).into(),
        ]);
        rows.push(row);
    }
    Ok(rows)
}

fn netsize_accuracy(cfg: &ScenarioConfig, t: &Trial, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Cell>>, HarnessError> {
    let mut net = build(cfg, t)?;
    let est = estimate(cfg, &mut net, rng)?;
    let n_hat = est.estimate().map_err(|e| HarnessError::Run(e.to_string()))?.n_hat;
    let mut row = t.lead();
    row.extend([
        cfg.samples.into(),
        n_hat.into(),
        ((n_hat - t.n as f64) / t.n as f64).into(),
    ]);
    Ok(vec![row])
}
