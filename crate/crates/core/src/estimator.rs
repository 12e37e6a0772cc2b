//! Local network-size estimation.
//!
//! For random keys the node looks up the k closest peers and keeps the mean
//! normalized distance `D_i` of the i-th closest one. With N uniform peers the
//! expected value is `i / (N + 1)`, so fitting `D_i ≈ c * i` by least squares
//! without intercept gives `c* = Σ i·D_i / Σ i²` and `N̂ = 1/c* − 1`.

use std::collections::VecDeque;

use crate::keyspace::{xor_distance, Key256};

/// Sliding window length used by default, one sample per bucket.
pub const DEFAULT_WINDOW: usize = crate::keyspace::BUCKET_COUNT;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("network size estimator has no samples yet")]
    Uninitialized,
    #[error("sample has no peers")]
    EmptySample,
    #[error("sample peers are not sorted by distance to the key")]
    Unsorted,
}

/// The closest peers returned for one random key.
#[derive(Debug, Clone, PartialEq)]
pub struct NetsizeSample {
    pub key: Key256,
    /// Ascending by XOR distance to `key`.
    pub closest: Vec<Key256>,
}

impl NetsizeSample {
    pub fn new(key: Key256, closest: Vec<Key256>) -> Self {
        Self { key, closest }
    }

    fn distances(&self) -> Result<Vec<f64>, EstimatorError> {
        if self.closest.is_empty() {
            return Err(EstimatorError::EmptySample);
        }
        let raw: Vec<_> = self.closest.iter().map(|p| xor_distance(self.key, *p)).collect();
        if raw.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EstimatorError::Unsorted);
        }
        Ok(raw.iter().map(|d| d.to_unit()).collect())
    }
}

/// Immutable snapshot of an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct NetsizeEstimate {
    pub n_hat: f64,
    pub sample_count: usize,
    /// Mean normalized distance of the i-th closest peer (index 0 is rank 1).
    pub avg_distance: Vec<f64>,
    /// Fitted slope `c* = 1 / (N̂ + 1)` before clamping.
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct NetsizeEstimator {
    k: usize,
    window: Option<usize>,
    samples: VecDeque<Vec<f64>>,
    // Cumulative mode only.
    sums: Vec<f64>,
    counts: Vec<usize>,
    total: usize,
}

impl NetsizeEstimator {
    /// Estimator over the most recent `DEFAULT_WINDOW` samples.
    pub fn new(k: usize) -> Self {
        Self::with_window(k, Some(DEFAULT_WINDOW))
    }

    /// `None` keeps a cumulative mean over every sample ever ingested.
    pub fn with_window(k: usize, window: Option<usize>) -> Self {
        assert!(k > 0, "k must be positive");
        assert!(window != Some(0), "window must be positive");
        Self {
            k,
            window,
            samples: VecDeque::new(),
            sums: vec![0.0; k],
            counts: vec![0; k],
            total: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sample_count(&self) -> usize {
        match self.window {
            Some(_) => self.samples.len(),
            None => self.total,
        }
    }

    pub fn ingest(&mut self, sample: &NetsizeSample) -> Result<(), EstimatorError> {
        let mut dists = sample.distances()?;
        dists.truncate(self.k);
        match self.window {
            Some(w) => {
                if self.samples.len() == w {
                    self.samples.pop_front();
                }
                self.samples.push_back(dists);
            }
            None => {
                for (i, d) in dists.iter().enumerate() {
                    self.sums[i] += d;
                    self.counts[i] += 1;
                }
                self.total += 1;
            }
        }
        Ok(())
    }

    /// Per-rank means; ranks with no contributions are `None`.
    fn rank_means(&self) -> Vec<Option<f64>> {
        let (sums, counts) = match self.window {
            Some(_) => {
                let mut sums = vec![0.0; self.k];
                let mut counts = vec![0usize; self.k];
                for s in &self.samples {
                    for (i, d) in s.iter().enumerate() {
                        sums[i] += d;
                        counts[i] += 1;
                    }
                }
                (sums, counts)
            }
            None => (self.sums.clone(), self.counts.clone()),
        };
        sums.iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    }

    pub fn estimate(&self) -> Result<NetsizeEstimate, EstimatorError> {
        if self.sample_count() == 0 {
            return Err(EstimatorError::Uninitialized);
        }
        let means = self.rank_means();
        let (mut num, mut den) = (0.0, 0.0);
        for (idx, m) in means.iter().enumerate() {
            if let Some(d) = m {
                let i = (idx + 1) as f64;
                num += i * d;
                den += i * i;
            }
        }
        let slope = num / den;
        let raw = if slope > 0.0 { 1.0 / slope - 1.0 } else { f64::INFINITY };
        Ok(NetsizeEstimate {
            n_hat: raw.max(self.k as f64),
            sample_count: self.sample_count(),
            avg_distance: means.into_iter().map_while(|m| m).collect(),
            slope,
        })
    }
}

/// Fills an estimator with `samples` lookups for keys drawn from `rng`.
pub fn sample_network<P, R>(
    view: &mut P,
    estimator: &mut NetsizeEstimator,
    samples: usize,
    rng: &mut R,
) -> Result<(), EstimatorError>
where
    P: crate::simnet::ClosestPeers + ?Sized,
    R: rand::Rng + ?Sized,
{
    for _ in 0..samples {
        let key = Key256::random(rng);
        let closest = view.closest_peers(&key);
        estimator.ingest(&NetsizeSample::new(key, closest))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{SimConfig, SimNetwork};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Peers at exact normalized distances `i / (n + 1)` from the zero key.
    fn synthetic_sample(n: f64, k: usize) -> NetsizeSample {
        let closest = (1..=k)
            .map(|i| {
                let frac = i as f64 / (n + 1.0);
                let top = (frac * 2f64.powi(64)) as u64;
                Key256::from_limbs([top, 0, 0, 0])
            })
            .collect();
        NetsizeSample::new(Key256::ZERO, closest)
    }

    // Sum of squared residuals of the least-squares objective.
    fn objective(means: &[f64], n: f64) -> f64 {
        means
            .iter()
            .enumerate()
            .map(|(idx, d)| (d - (idx + 1) as f64 / (n + 1.0)).powi(2))
            .sum()
    }

    fn grid_search(means: &[f64], lo: u64, hi: u64) -> u64 {
        (lo..=hi)
            .min_by(|&a, &b| objective(means, a as f64).total_cmp(&objective(means, b as f64)))
            .unwrap()
    }

    fn simulated(n: usize, seed: u64, samples: usize) -> NetsizeEstimate {
        let mut net = SimNetwork::build(n, seed, SimConfig::default()).unwrap();
        let mut est = NetsizeEstimator::new(20);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        sample_network(&mut net, &mut est, samples, &mut rng).unwrap();
        est.estimate().unwrap()
    }

    #[test]
    fn uninitialized_and_bad_samples() {
        let mut est = NetsizeEstimator::new(20);
        assert_eq!(est.estimate(), Err(EstimatorError::Uninitialized));
        assert_eq!(
            est.ingest(&NetsizeSample::new(Key256::ZERO, vec![])),
            Err(EstimatorError::EmptySample)
        );
        let mut s = synthetic_sample(1000.0, 20);
        s.closest.swap(3, 4);
        assert_eq!(est.ingest(&s), Err(EstimatorError::Unsorted));
        assert_eq!(est.sample_count(), 0);
    }

    #[test]
    fn single_exact_sample() {
        let mut est = NetsizeEstimator::new(20);
        est.ingest(&synthetic_sample(1000.0, 20)).unwrap();
        let e = est.estimate().unwrap();
        for (idx, d) in e.avg_distance.iter().enumerate() {
            let want = (idx + 1) as f64 / 1001.0;
            assert!((d - want).abs() < 1e-15, "rank {idx}");
        }
        assert!((e.n_hat - 1000.0).abs() / 1000.0 < 1e-6, "{}", e.n_hat);
        // A duplicate sample leaves the means unchanged.
        est.ingest(&synthetic_sample(1000.0, 20)).unwrap();
        assert_eq!(est.estimate().unwrap().avg_distance, e.avg_distance);
    }

    #[test]
    fn closed_form_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        use rand::Rng;
        for trial in 0..5 {
            // Noisy means around some N.
            let n = [150.0, 900.0, 3000.0, 20_000.0, 250_000.0][trial];
            let mut means: Vec<f64> = (1..=20)
                .map(|i| i as f64 / (n + 1.0) * rng.random_range(0.8..1.2))
                .collect();
            means.sort_by(f64::total_cmp);
            let mut est = NetsizeEstimator::new(20);
            let closest = means
                .iter()
                .map(|m| Key256::from_limbs([(m * 2f64.powi(64)) as u64, 0, 0, 0]))
                .collect();
            est.ingest(&NetsizeSample::new(Key256::ZERO, closest)).unwrap();
            let closed = est.estimate().unwrap().n_hat;
            let grid = grid_search(&est.estimate().unwrap().avg_distance, 20, 1_000_000);
            assert!((closed - grid as f64).abs() <= 1.0, "closed {closed} grid {grid}");
        }
    }

    #[test]
    fn window_keeps_recent_samples() {
        let mut est = NetsizeEstimator::with_window(20, Some(2));
        est.ingest(&synthetic_sample(30.0, 20)).unwrap();
        est.ingest(&synthetic_sample(500.0, 20)).unwrap();
        est.ingest(&synthetic_sample(500.0, 20)).unwrap();
        assert_eq!(est.sample_count(), 2);
        assert!((est.estimate().unwrap().n_hat - 500.0).abs() < 1e-6);

        let mut cumulative = NetsizeEstimator::with_window(20, None);
        cumulative.ingest(&synthetic_sample(30.0, 20)).unwrap();
        cumulative.ingest(&synthetic_sample(500.0, 20)).unwrap();
        assert_eq!(cumulative.sample_count(), 2);
        assert!(cumulative.estimate().unwrap().n_hat < 100.0);
    }

    #[test]
    fn short_samples_only_feed_their_ranks() {
        let mut est = NetsizeEstimator::new(20);
        est.ingest(&synthetic_sample(1000.0, 5)).unwrap();
        let e = est.estimate().unwrap();
        assert_eq!(e.avg_distance.len(), 5);
        assert!((e.n_hat - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn estimate_is_clamped_to_k() {
        let mut est = NetsizeEstimator::new(20);
        est.ingest(&synthetic_sample(3.0, 3)).unwrap();
        assert_eq!(est.estimate().unwrap().n_hat, 20.0);
    }

    #[test]
    fn simulated_rank_means_follow_order_statistics() {
        let e = simulated(5000, 1, 256);
        assert_eq!(e.avg_distance.len(), 20);
        assert!(e.avg_distance.windows(2).all(|w| w[0] <= w[1]));
        for (idx, d) in e.avg_distance.iter().enumerate() {
            let want = (idx + 1) as f64 / 5001.0;
            assert!((d / want - 1.0).abs() <= 0.15, "rank {}: {d} vs {want}", idx + 1);
        }
    }

    #[test]
    fn estimate_scales_with_network_size() {
        let seeds = 20;
        let mut slopes = [0.0f64; 2];
        for seed in 0..seeds {
            slopes[0] += simulated(2500, seed, 256).slope;
            slopes[1] += simulated(5000, seed + 100, 256).slope;
        }
        let ratio = slopes[0] / slopes[1];
        // c* = 1/(N+1); halving N doubles it.
        assert!((ratio / (5001.0 / 2501.0) - 1.0).abs() < 0.10, "ratio {ratio}");
    }

    #[test]
    fn tiny_network_estimate() {
        let mut sum = 0.0;
        for seed in 0..20 {
            sum += simulated(20, seed, 256).n_hat;
        }
        let mean = sum / 20.0;
        assert!(mean >= 20.0 && (mean - 20.0).abs() / 20.0 <= 0.25, "{mean}");
    }
}
