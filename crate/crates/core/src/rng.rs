//! Counter-based randomness helpers.
//!
//! The simulator never shares a stateful generator between independent
//! decisions; instead every decision is a pure function of a seed and a few
//! counters, so reordering work does not change results.

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Combines two words into one well-mixed word.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Maps a word to a double in `[0, 1)` using its top 53 bits.
pub fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sub-seed for trial `index` of a run with `master` seed.
///
/// `sub_seed = splitmix64(master XOR splitmix64(stream) XOR splitmix64(index + 1))`,
/// where `stream` separates independent sweeps (e.g. network sizes) of one run.
pub fn sub_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream) ^ splitmix64(index.wrapping_add(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_range() {
        assert_eq!(unit(0), 0.0);
        assert!(unit(u64::MAX) < 1.0);
    }

    #[test]
    fn sub_seeds_differ() {
        let a: std::collections::HashSet<u64> = (0..1000).map(|i| sub_seed(42, 0, i)).collect();
        assert_eq!(a.len(), 1000);
        assert_ne!(sub_seed(42, 0, 3), sub_seed(42, 1, 3));
        assert_eq!(sub_seed(42, 1, 3), sub_seed(42, 1, 3));
    }

    #[test]
    fn unit_is_roughly_uniform() {
        let n = 100_000;
        let mean = (0..n).map(|i| unit(splitmix64(i))).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005);
    }
}
