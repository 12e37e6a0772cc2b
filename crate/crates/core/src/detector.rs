//! Censorship detection by comparing the common-prefix-length profile of a
//! lookup result with its distribution under honest, uniform peer IDs.
//!
//! For N uniform IDs the CPL of one ID with a key is geometric,
//! `P(X = x) = 0.5^(x+1)`. A lookup returns the k largest CPLs. The CDF of the
//! j-th largest is
//!
//! ```text
//! F_j(x) = Σ_{i=0}^{j-1} C(N,i) (1 - 0.5^(x+1))^(N-i) 0.5^((x+1) i)     x >= 0
//! ```
//!
//! and the model PMF averages the k marginals. A lookup is flagged when the
//! KL divergence of its empirical CPL histogram from the model exceeds a
//! threshold.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::estimator::{EstimatorError, NetsizeEstimator};
use crate::keyspace::{common_prefix_length, Key256, KEY_BITS};
use crate::simnet::ClosestPeers;

pub const DEFAULT_THRESHOLD: f64 = 0.94;
/// Floor applied to model probabilities inside the KL sum.
pub const PMF_FLOOR: f64 = 1e-300;
/// CPL values run over `0..=256`.
pub const SUPPORT: usize = KEY_BITS as usize + 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("expected {want} common prefix lengths, got {got}")]
    WrongLength { got: usize, want: usize },
    #[error("common prefix length {0} is outside 0..=256")]
    OutOfRange(u32),
}

/// Probability mass over common prefix lengths `0..=256`.
#[derive(Debug, Clone, PartialEq)]
pub struct CplDistribution {
    pmf: Vec<f64>,
}

impl CplDistribution {
    pub fn from_pmf(pmf: Vec<f64>) -> Self {
        assert_eq!(pmf.len(), SUPPORT, "pmf must cover 0..=256");
        Self { pmf }
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mass(&self, cpl: u32) -> f64 {
        self.pmf.get(cpl as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(x, p)| x as f64 * p).sum()
    }

    /// CPL values with positive mass.
    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.pmf
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(x, _)| x as u32)
    }

    pub fn total_variation(&self, other: &CplDistribution) -> f64 {
        0.5 * self
            .pmf
            .iter()
            .zip(&other.pmf)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// `ln(0.5^(x+1))`
fn ln_half_pow(x: i64) -> f64 {
    -((x + 1) as f64) * std::f64::consts::LN_2
}

/// `ln` of the i-th binomial term `C(N,i) s^i (1-s)^(N-i)` with
/// `s = 0.5^(x+1)`; `None` when `i > N`.
fn ln_term(n: u64, i: u64, x: i64, ln_one_minus_s: f64) -> Option<f64> {
    (i <= n).then(|| ln_binomial(n, i) + (n - i) as f64 * ln_one_minus_s + i as f64 * ln_half_pow(x))
}

fn ln_one_minus_half_pow(x: i64) -> f64 {
    (-(0.5f64.powi((x + 1) as i32))).ln_1p()
}

fn round_size(n: f64) -> u64 {
    assert!(n >= 1.0 && n.is_finite(), "network size must be at least 1, got {n}");
    n.round() as u64
}

/// CDF of the j-th largest CPL among `round(n)` uniform IDs, evaluated in log
/// space term by term.
pub fn model_cdf_jth(j: usize, x: i64, n: f64) -> f64 {
    assert!(j >= 1, "j is 1-based");
    if x < 0 {
        return 0.0;
    }
    let n = round_size(n);
    let l1s = ln_one_minus_half_pow(x);
    (0..j as u64)
        .filter_map(|i| ln_term(n, i, x, l1s))
        .map(f64::exp)
        .sum::<f64>()
        .min(1.0)
}

/// Binomial terms `t_i(x)` for `i < k`, plus `Σ_{i>=k} t_i(x)` when the mean
/// `N s` is small enough for the tail series to converge quickly.
struct Terms {
    head: Vec<f64>,
    tail: Option<f64>,
}

fn terms_at(n: u64, k: usize, x: i64) -> Terms {
    let l1s = ln_one_minus_half_pow(x);
    let head: Vec<f64> = (0..k as u64)
        .map(|i| ln_term(n, i, x, l1s).map_or(0.0, f64::exp))
        .collect();
    let s = 0.5f64.powi((x + 1) as i32);
    let tail = (n as f64 * s <= 4.0 * k as f64).then(|| {
        let Some(ln_first) = ln_term(n, k as u64, x, l1s) else {
            return 0.0;
        };
        // t_{i+1} = t_i * (N - i) / (i + 1) * s / (1 - s)
        let odds = s / (1.0 - s);
        let mut term = ln_first.exp();
        let mut sum = 0.0;
        let mut i = k as u64;
        while term > 0.0 && i <= n {
            sum += term;
            if term < sum * 1e-18 && (i as f64) > n as f64 * s {
                break;
            }
            term *= (n - i) as f64 / (i + 1) as f64 * odds;
            i += 1;
        }
        sum
    });
    Terms { head, tail }
}

impl Terms {
    /// `F_j(x)` for j = 1..=k.
    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.head
            .iter()
            .map(|t| {
                acc += t;
                acc.min(1.0)
            })
            .collect()
    }

    /// `1 - F_j(x) = Σ_{i>=j} t_i(x)` for j = 1..=k, if the tail is known.
    fn survival(&self) -> Option<Vec<f64>> {
        let mut acc = self.tail?;
        let mut out = vec![0.0; self.head.len()];
        for j in (1..=self.head.len()).rev() {
            // Σ_{i>=j} t_i = Σ_{i>=k} t_i + Σ_{i=j}^{k-1} t_i
            out[j - 1] = acc;
            acc += self.head[j - 1];
        }
        Some(out)
    }
}

/// Average PMF of the k largest CPLs among `round(n)` uniform IDs.
///
/// Each marginal `F_j(x) - F_j(x-1)` is taken from the CDF where the CDF is
/// small and from the survival function where it is close to one, so the
/// upper tail keeps its relative precision.
pub fn model_distribution(n: f64, k: usize) -> CplDistribution {
    assert!(k >= 1);
    let n = round_size(n);
    let mut pmf = vec![0.0; SUPPORT];
    let mut prev_cdf = vec![0.0; k];
    let mut prev_surv = Some(vec![1.0; k]);
    for x in 0..SUPPORT as i64 {
        let terms = terms_at(n, k, x);
        let cdf = terms.cdf();
        let surv = terms.survival();
        let mut total = 0.0;
        for j in 0..k {
            let lower = cdf[j] - prev_cdf[j];
            let mass = match (&prev_surv, &surv) {
                (Some(ps), Some(s)) if cdf[j] > 0.5 => ps[j] - s[j],
                _ => lower,
            };
            total += mass.max(0.0);
        }
        pmf[x as usize] = total / k as f64;
        prev_cdf = cdf;
        prev_surv = surv;
    }
    CplDistribution::from_pmf(pmf)
}

/// Histogram of exactly `k` observed CPLs, normalized by `k`.
pub fn empirical_distribution(cpls: &[u32], k: usize) -> Result<CplDistribution, DetectError> {
    if cpls.len() != k {
        return Err(DetectError::WrongLength { got: cpls.len(), want: k });
    }
    let mut pmf = vec![0.0; SUPPORT];
    for &c in cpls {
        if c > KEY_BITS {
            return Err(DetectError::OutOfRange(c));
        }
        pmf[c as usize] += 1.0;
    }
    for p in &mut pmf {
        *p /= k as f64;
    }
    Ok(CplDistribution::from_pmf(pmf))
}

/// `D(q || p)` summed over the support of `q`, with `p` floored at
/// [`PMF_FLOOR`].
pub fn kl_divergence(q: &CplDistribution, p: &CplDistribution) -> f64 {
    q.pmf
        .iter()
        .zip(&p.pmf)
        .filter(|(&qx, _)| qx > 0.0)
        .map(|(&qx, &px)| qx * (qx / px.max(PMF_FLOOR)).ln())
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionVerdict {
    pub key: Key256,
    pub kl: f64,
    pub threshold: f64,
    /// `kl > threshold`
    pub attacked: bool,
    pub n_hat_used: f64,
    pub empirical: CplDistribution,
    pub model: CplDistribution,
}

/// CSV form of a verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictRow {
    pub key: Key256,
    pub kl: f64,
    pub threshold: f64,
    pub attacked: bool,
    pub n_hat: f64,
}

impl DetectionVerdict {
    pub fn row(&self) -> VerdictRow {
        VerdictRow {
            key: self.key,
            kl: self.kl,
            threshold: self.threshold,
            attacked: self.attacked,
            n_hat: self.n_hat_used,
        }
    }
}

/// Writes verdicts as CSV with header `key,kl,threshold,attacked,n_hat`.
pub fn write_verdicts<W: Write>(out: W, verdicts: &[DetectionVerdict]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for v in verdicts {
        w.serialize(v.row())?;
    }
    w.flush()?;
    Ok(())
}

/// Detection with memoized model distributions, keyed by `(k, round(N̂))`.
#[derive(Debug, Clone)]
pub struct Detector {
    threshold: f64,
    models: HashMap<(usize, u64), Arc<CplDistribution>>,
}

impl Default for Detector {
    fn default() -> Self {
        Self::new(DEFAULT_THRESHOLD)
    }
}

impl Detector {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            models: HashMap::new(),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn model(&mut self, n_hat: f64, k: usize) -> Arc<CplDistribution> {
        let key = (k, round_size(n_hat));
        self.models
            .entry(key)
            .or_insert_with(|| Arc::new(model_distribution(n_hat, k)))
            .clone()
    }

    /// Runs one detection for `key`: a single closest-peers lookup, the
    /// empirical CPL histogram, the model for the current size estimate, and
    /// the KL test.
    pub fn detect<P: ClosestPeers + ?Sized>(
        &mut self,
        view: &mut P,
        estimator: &NetsizeEstimator,
        key: Key256,
    ) -> Result<DetectionVerdict, DetectError> {
        let k = view.replication();
        let peers = view.closest_peers(&key);
        let cpls: Vec<u32> = peers.iter().map(|p| common_prefix_length(*p, key)).collect();
        let q = empirical_distribution(&cpls, k)?;
        let n_hat = estimator.estimate()?.n_hat;
        let p = self.model(n_hat, k);
        let kl = kl_divergence(&q, &p);
        Ok(DetectionVerdict {
            key,
            kl,
            threshold: self.threshold,
            attacked: kl > self.threshold,
            n_hat_used: n_hat,
            empirical: q,
            model: (*p).clone(),
        })
    }
}

/// One-shot detection without a model cache.
pub fn detect<P: ClosestPeers + ?Sized>(
    view: &mut P,
    estimator: &NetsizeEstimator,
    key: Key256,
    threshold: f64,
) -> Result<DetectionVerdict, DetectError> {
    Detector::new(threshold).detect(view, estimator, key)
}
