use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::simnet::{SimConfig, DEFAULT_ALPHA, DEFAULT_K, HOUR};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    AttackEffectiveness,
    DetectionRoc,
    DetectionVsNetsize,
    MitigationEffectiveness,
    MitigationOverhead,
    SybilGenCost,
    NetsizeAccuracy,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::AttackEffectiveness,
        ScenarioKind::DetectionRoc,
        ScenarioKind::DetectionVsNetsize,
        ScenarioKind::MitigationEffectiveness,
        ScenarioKind::MitigationOverhead,
        ScenarioKind::SybilGenCost,
        ScenarioKind::NetsizeAccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::AttackEffectiveness => "attack-effectiveness",
            ScenarioKind::DetectionRoc => "detection-roc",
            ScenarioKind::DetectionVsNetsize => "detection-vs-netsize",
            ScenarioKind::MitigationEffectiveness => "mitigation-effectiveness",
            ScenarioKind::MitigationOverhead => "mitigation-overhead",
            ScenarioKind::SybilGenCost => "sybil-gen-cost",
            ScenarioKind::NetsizeAccuracy => "netsize-accuracy",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown scenario `{s}`")))
    }
}

/// Everything a scenario run depends on. Two runs with equal configs write
/// identical CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub n: Vec<usize>,
    pub e_values: Vec<usize>,
    pub trials: usize,
    pub thresholds: Vec<f64>,
    pub p_miss: f64,
    pub p_offline: f64,
    pub seed: u64,
    pub ttl_hours: f64,
    pub out: Option<PathBuf>,
    pub k: usize,
    pub alpha: usize,
    /// Lookups fed to the size estimator per trial.
    pub samples: usize,
    /// FindProviders queries per trial.
    pub downloaders: usize,
    /// Targets per network in `sybil-gen-cost`.
    pub targets: usize,
    pub margin: u32,
    pub lookup_budget: usize,
    /// Provide before the Sybils join instead of after.
    pub provide_first: bool,
    /// Virtual hours between the provide and the queries.
    pub wait_hours: f64,
}

impl ScenarioConfig {
    /// Defaults for `scenario`, sized to finish in a few minutes.
    pub fn new(scenario: ScenarioKind) -> Self {
        use ScenarioKind::*;
        let (n, e_values, trials, thresholds): (Vec<usize>, Vec<usize>, usize, Vec<f64>) = match scenario {
            AttackEffectiveness => (vec![5000], vec![0, 10, 20, 45], 100, vec![0.94]),
            DetectionRoc => (
                vec![10_000],
                vec![0, 45],
                200,
                (1..=10).map(|i| i as f64 * 0.2).collect(),
            ),
            DetectionVsNetsize => (vec![2500, 5000, 10_000, 25_000], vec![0], 300, vec![0.94]),
            MitigationEffectiveness => (vec![5000], vec![0, 20, 45, 100, 200], 50, vec![0.94]),
            MitigationOverhead => (vec![5000], vec![0, 45, 90, 180], 50, vec![0.94]),
            SybilGenCost => (vec![1000, 2000, 5000, 10_000], vec![45], 50, vec![0.94]),
            NetsizeAccuracy => (vec![1000, 5000, 25_000], vec![0], 50, vec![0.94]),
        };
        Self {
            scenario,
            n,
            e_values,
            trials,
            thresholds,
            p_miss: 0.0,
            p_offline: 0.0,
            seed: 1,
            ttl_hours: 48.0,
            out: None,
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            samples: 256,
            downloaders: 10,
            targets: 20,
            margin: 0,
            lookup_budget: crate::mitigation::DEFAULT_LOOKUP_BUDGET,
            provide_first: false,
            wait_hours: 0.0,
        }
    }

    /// Sets one option from text. Keys match the long CLI flags; `_` and `-`
    /// are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "scenario" => self.scenario = value.parse()?,
            "n" => self.n = parse_list(&key, value)?,
            "e" => self.e_values = parse_list(&key, value)?,
            "trials" => self.trials = parse_one(&key, value)?,
            "threshold" => self.thresholds = parse_list(&key, value)?,
            "p-miss" => self.p_miss = parse_one(&key, value)?,
            "p-offline" => self.p_offline = parse_one(&key, value)?,
            "seed" => self.seed = parse_one(&key, value)?,
            "ttl-hours" => self.ttl_hours = parse_one(&key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "k" => self.k = parse_one(&key, value)?,
            "alpha" => self.alpha = parse_one(&key, value)?,
            "samples" => self.samples = parse_one(&key, value)?,
            "downloaders" => self.downloaders = parse_one(&key, value)?,
            "targets" => self.targets = parse_one(&key, value)?,
            "margin" => self.margin = parse_one(&key, value)?,
            "lookup-budget" => self.lookup_budget = parse_one(&key, value)?,
            "provide-first" => self.provide_first = parse_one(&key, value)?,
            "wait-hours" => self.wait_hours = parse_one(&key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown option `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. Blank lines and lines starting with
    /// `#` are skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<(), HarnessError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key=value", no + 1)))?;
            self.set(key, value)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n.is_empty() || self.e_values.is_empty() || self.thresholds.is_empty() {
            return bad("n, e and threshold lists must be non-empty".into());
        }
        if self.k == 0 || self.alpha == 0 {
            return bad("k and alpha must be positive".into());
        }
        for &n in &self.n {
            if n <= self.k.max(self.downloaders) {
                return bad(format!("n={n} must exceed k and the downloader count"));
            }
        }
        if self.thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return bad("thresholds must be finite and non-negative".into());
        }
        if !(self.ttl_hours > 0.0 && self.ttl_hours.is_finite()) {
            return bad("ttl-hours must be positive".into());
        }
        if !(self.wait_hours >= 0.0 && self.wait_hours.is_finite()) {
            return bad("wait-hours must be non-negative".into());
        }
        if self.samples == 0 || self.downloaders == 0 || self.targets == 0 || self.lookup_budget == 0 {
            return bad("samples, downloaders, targets and lookup-budget must be positive".into());
        }
        if self.scenario == ScenarioKind::SybilGenCost && self.e_values.contains(&0) {
            return bad("sybil-gen-cost needs e >= 1".into());
        }
        self.sim_config().validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub(crate) fn sim_config(&self) -> SimConfig {
        SimConfig {
            k: self.k,
            alpha: self.alpha,
            p_offline: self.p_offline,
            p_miss: self.p_miss,
            record_ttl: hours(self.ttl_hours),
            reprovide_interval: None,
        }
    }
}

pub(crate) fn hours(h: f64) -> u64 {
    (h * HOUR as f64).round() as u64
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_one(key, s.trim()))
        .collect()
}
