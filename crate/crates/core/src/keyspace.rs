//! 256-bit identifiers shared by peer IDs and CIDs.
//!
//! Keys are stored as four big-endian `u64` limbs, so the derived ordering is
//! numeric ordering and bit 0 is the most significant bit. IDs are derived with
//! SHA-256, which is the one hash function used throughout the crate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Number of bits in a key.
pub const KEY_BITS: u32 = 256;

/// Number of k-buckets a Kademlia routing table would hold for this key size.
/// Routing tables are not materialized by the simulator; the constant is kept
/// for reference and for the estimator's default sample count.
pub const BUCKET_COUNT: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KeyParseError {
    #[error("expected 64 hex characters, got {0}")]
    Length(usize),
    #[error("invalid hex digit in key")]
    Digit,
}

/// A 256-bit key in the DHT key space.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Key256([u64; 4]);

/// XOR distance between two keys, an unsigned 256-bit integer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Distance([u64; 4]);

impl Key256 {
    pub const ZERO: Self = Self([0; 4]);

    pub const fn from_limbs(limbs: [u64; 4]) -> Self {
        Self(limbs)
    }

    pub fn limbs(&self) -> [u64; 4] {
        self.0
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        let mut limbs = [0u64; 4];
        for (i, limb) in limbs.iter_mut().enumerate() {
            let mut chunk = [0u8; 8];
            chunk.copy_from_slice(&bytes[i * 8..i * 8 + 8]);
            *limb = u64::from_be_bytes(chunk);
        }
        Self(limbs)
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (i, limb) in self.0.iter().enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&limb.to_be_bytes());
        }
        out
    }

    /// Uniformly random key.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self([rng.random(), rng.random(), rng.random(), rng.random()])
    }

    /// Bit `i` of the key, counting from the most significant bit.
    pub fn bit(&self, i: u32) -> bool {
        assert!(i < KEY_BITS, "bit index {i} out of range");
        (self.0[(i / 64) as usize] >> (63 - i % 64)) & 1 == 1
    }

    /// Copy of the key with bit `i` inverted.
    pub fn with_bit_flipped(&self, i: u32) -> Self {
        assert!(i < KEY_BITS, "bit index {i} out of range");
        let mut limbs = self.0;
        limbs[(i / 64) as usize] ^= 1 << (63 - i % 64);
        Self(limbs)
    }

    /// Smallest key sharing the first `len` bits with `self`.
    pub fn prefix_floor(&self, len: u32) -> Self {
        let mut limbs = self.0;
        for (i, limb) in limbs.iter_mut().enumerate() {
            *limb &= !low_mask(len, i as u32);
        }
        Self(limbs)
    }

    /// Largest key sharing the first `len` bits with `self`.
    pub fn prefix_ceil(&self, len: u32) -> Self {
        let mut limbs = self.0;
        for (i, limb) in limbs.iter_mut().enumerate() {
            *limb |= low_mask(len, i as u32);
        }
        Self(limbs)
    }

    /// Keeps the first `len` bits of `self` and takes the rest from `suffix`.
    pub fn splice_prefix(&self, len: u32, suffix: &Key256) -> Self {
        let mut limbs = [0u64; 4];
        for (i, limb) in limbs.iter_mut().enumerate() {
            let mask = low_mask(len, i as u32);
            *limb = (self.0[i] & !mask) | (suffix.0[i] & mask);
        }
        Self(limbs)
    }

    pub fn distance(&self, other: &Key256) -> Distance {
        xor_distance(*self, *other)
    }

    pub fn to_hex(&self) -> String {
        format!("{self}")
    }
}

/// Mask of the bits in limb `limb` whose global index is `>= len`.
fn low_mask(len: u32, limb: u32) -> u64 {
    let start = limb * 64;
    if len <= start {
        u64::MAX
    } else if len >= start + 64 {
        0
    } else {
        u64::MAX >> (len - start)
    }
}

impl Distance {
    pub const ZERO: Self = Self([0; 4]);
    pub const MAX: Self = Self([u64::MAX; 4]);

    pub const fn from_limbs(limbs: [u64; 4]) -> Self {
        Self(limbs)
    }

    pub fn limbs(&self) -> [u64; 4] {
        self.0
    }

    /// `2^exp`, for `exp < 256`.
    pub fn pow2(exp: u32) -> Self {
        assert!(exp < KEY_BITS, "2^{exp} does not fit in 256 bits");
        let mut limbs = [0u64; 4];
        let bit = KEY_BITS - 1 - exp;
        limbs[(bit / 64) as usize] = 1 << (63 - bit % 64);
        Self(limbs)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 4]
    }

    pub fn leading_zeros(&self) -> u32 {
        let mut zeros = 0;
        for limb in self.0 {
            if limb == 0 {
                zeros += 64;
            } else {
                return zeros + limb.leading_zeros();
            }
        }
        zeros
    }

    /// Position of the highest set bit plus one; 0 for the zero distance.
    pub fn bit_length(&self) -> u32 {
        KEY_BITS - self.leading_zeros()
    }

    /// The distance divided by `2^256`, as a double in `[0, 1)`.
    pub fn to_unit(&self) -> f64 {
        const TWO_64: f64 = 18_446_744_073_709_551_616.0;
        self.0
            .iter()
            .rev()
            .fold(0.0, |acc, &limb| (acc + limb as f64) / TWO_64)
    }
}

/// `a XOR b` as an unsigned 256-bit integer.
pub fn xor_distance(a: Key256, b: Key256) -> Distance {
    Distance([
        a.0[0] ^ b.0[0],
        a.0[1] ^ b.0[1],
        a.0[2] ^ b.0[2],
        a.0[3] ^ b.0[3],
    ])
}

/// Number of leading bits on which `a` and `b` agree; 256 iff `a == b`.
pub fn common_prefix_length(a: Key256, b: Key256) -> u32 {
    xor_distance(a, b).leading_zeros()
}

/// SHA-256 of `seed` as a key. Stands in for hashing a public key.
pub fn derive_id(seed: &[u8]) -> Key256 {
    assert!(!seed.is_empty(), "derive_id needs a non-empty seed");
    let digest: [u8; 32] = Sha256::digest(seed).into();
    Key256::from_bytes(digest)
}

/// SHA-256 initial hash value.
const SHA256_IV: [u32; 8] = [
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
];

/// The padded SHA-256 block of `tag || seed_le || counter_le`, if the
/// message fits in one block.
fn single_block(tag: &[u8], seed: u64, counter: u64) -> Option<[u8; 64]> {
    let len = tag.len() + 16;
    if len > 55 {
        return None;
    }
    let mut block = [0u8; 64];
    block[..tag.len()].copy_from_slice(tag);
    block[tag.len()..tag.len() + 8].copy_from_slice(&seed.to_le_bytes());
    block[tag.len() + 8..len].copy_from_slice(&counter.to_le_bytes());
    block[len] = 0x80;
    block[56..].copy_from_slice(&(len as u64 * 8).to_be_bytes());
    Some(block)
}

fn state_to_key(state: &[u32; 8]) -> Key256 {
    Key256(std::array::from_fn(|i| (u64::from(state[2 * i]) << 32) | u64::from(state[2 * i + 1])))
}

/// `derive_id(tag || seed_le || counter_le)` without heap allocation.
///
/// Sybil generation calls this once per attempt, so messages that fit one
/// block skip the streaming hasher and run a single compression on a
/// pre-padded block. The digest is the same either way.
pub fn derive_id_counter(tag: &[u8], seed: u64, counter: u64) -> Key256 {
    if let Some(block) = single_block(tag, seed, counter) {
        let mut state = SHA256_IV;
        sha2::block_api::compress256(&mut state, &[block]);
        return state_to_key(&state);
    }
    let mut hasher = Sha256::new();
    hasher.update(tag);
    hasher.update(seed.to_le_bytes());
    hasher.update(counter.to_le_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    Key256::from_bytes(digest)
}

impl fmt::Display for Key256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for limb in self.0 {
            write!(f, "{limb:016x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Key256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key256({:016x}..)", self.0[0])
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for limb in self.0 {
            write!(f, "{limb:016x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Distance(2^{})", self.bit_length().saturating_sub(1))
    }
}

fn parse_limbs(s: &str) -> Result<[u64; 4], KeyParseError> {
    if s.len() != 64 {
        return Err(KeyParseError::Length(s.len()));
    }
    if !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(KeyParseError::Digit);
    }
    let mut limbs = [0u64; 4];
    for (i, limb) in limbs.iter_mut().enumerate() {
        *limb = u64::from_str_radix(&s[i * 16..i * 16 + 16], 16)
            .map_err(|_| KeyParseError::Digit)?;
    }
    Ok(limbs)
}

impl FromStr for Key256 {
    type Err = KeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_limbs(s).map(Self)
    }
}

impl FromStr for Distance {
    type Err = KeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_limbs(s).map(Self)
    }
}

macro_rules! hex_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_serde!(Key256);
hex_serde!(Distance);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assert_ne, prop_assume, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn top_bit() -> Key256 {
        Key256::from_limbs([1 << 63, 0, 0, 0])
    }

    // Bit-by-bit reference for the prefix length.
    fn cpl_by_bits(a: Key256, b: Key256) -> u32 {
        (0..KEY_BITS).take_while(|&i| a.bit(i) == b.bit(i)).count() as u32
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = Key256::random(&mut rng);
            assert!(xor_distance(a, a).is_zero());
            assert_eq!(common_prefix_length(a, a), 256);
        }
    }

    #[test]
    fn single_bit_distance() {
        let d = xor_distance(top_bit(), Key256::ZERO);
        assert_eq!(d, Distance::pow2(255));
        assert_eq!(d.to_unit(), 0.5);
        assert_eq!(common_prefix_length(top_bit(), Key256::ZERO), 0);
    }

    #[test]
    fn distance_symmetry_and_cpl_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a = Key256::random(&mut rng);
            // Force long shared prefixes in some pairs.
            let len = rng.random_range(0..=256u32);
            let b = a.splice_prefix(len, &Key256::random(&mut rng));
            let d = xor_distance(a, b);
            assert_eq!(d, xor_distance(b, a));
            let cpl = common_prefix_length(a, b);
            assert_eq!(cpl, cpl_by_bits(a, b));
            assert_eq!(cpl, 256 - d.bit_length());
            for l in 0..=256u32 {
                let below = l == 0 || d < Distance::pow2(256 - l);
                assert_eq!(cpl >= l, below, "l={l} cpl={cpl}");
            }
        }
    }

    #[test]
    fn prefix_bounds() {
        let k: Key256 = "0123456789abcdef0123456789abcdef0123456789abcdef0123456789abcdef"
            .parse()
            .unwrap();
        assert_eq!(k.prefix_floor(256), k);
        assert_eq!(k.prefix_ceil(256), k);
        assert_eq!(k.prefix_floor(0), Key256::ZERO);
        assert_eq!(k.prefix_ceil(0), Key256::from_limbs([u64::MAX; 4]));
        assert_eq!(
            k.prefix_floor(68).to_hex(),
            format!("0123456789abcdef0{}", "0".repeat(47))
        );
        assert_eq!(
            k.prefix_ceil(68).to_hex(),
            format!("0123456789abcdef0{}", "f".repeat(47))
        );
        let floor = k.prefix_floor(70);
        assert!(common_prefix_length(floor, k) >= 70);
        assert!(floor <= k && k <= k.prefix_ceil(70));
    }

    #[test]
    fn flipping_a_bit_sets_cpl() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Key256::random(&mut rng);
        for i in 0..256 {
            let f = k.with_bit_flipped(i);
            assert_eq!(common_prefix_length(k, f), i);
            assert_ne!(k.bit(i), f.bit(i));
        }
    }

    #[test]
    fn hex_rejects_bad_input() {
        assert_eq!("abc".parse::<Key256>(), Err(KeyParseError::Length(3)));
        let bad = "g".repeat(64);
        assert_eq!(bad.parse::<Key256>(), Err(KeyParseError::Digit));
        let upper = "AB".repeat(32);
        assert_eq!(upper.parse::<Key256>().unwrap().to_hex(), "ab".repeat(32));
    }

    #[test]
    fn derive_id_is_deterministic_and_distinct() {
        assert_eq!(derive_id(b"peer-1"), derive_id(b"peer-1"));
        assert_ne!(derive_id(b"peer-1"), derive_id(b"peer-2"));
        // SHA-256("abc")
        assert_eq!(
            derive_id(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut buf = b"t".to_vec();
        buf.extend_from_slice(&5u64.to_le_bytes());
        buf.extend_from_slice(&9u64.to_le_bytes());
        assert_eq!(derive_id(&buf), derive_id_counter(b"t", 5, 9));
    }

    #[test]
    fn counter_ids_match_streaming_hash() {
        // Tags of 0..=60 bytes cover the one-block path and the fallback.
        for tag_len in 0..=60usize {
            let tag: Vec<u8> = (0..tag_len as u8).collect();
            for (seed, counter) in [(0, 0), (1, 2), (u64::MAX, 12345), (0xdead_beef, u64::MAX)] {
                let mut buf = tag.clone();
                buf.extend_from_slice(&seed.to_le_bytes());
                buf.extend_from_slice(&counter.to_le_bytes());
                assert_eq!(derive_id(&buf), derive_id_counter(&tag, seed, counter), "tag {tag_len}");
            }
        }
    }

    #[test]
    fn derive_id_over_many_seeds() {
        let n = 100_000u64;
        let mut seen = std::collections::HashSet::with_capacity(n as usize);
        let mut ones = [0u32; 256];
        let mut cells = [0u64; 256];
        for c in 0..n {
            let id = derive_id(&c.to_be_bytes());
            assert!(seen.insert(id), "collision at seed {c}");
            for (i, count) in ones.iter_mut().enumerate() {
                *count += id.bit(i as u32) as u32;
            }
            cells[(id.limbs()[0] >> 56) as usize] += 1;
        }
        for (i, &count) in ones.iter().enumerate() {
            let freq = count as f64 / n as f64;
            assert!((freq - 0.5).abs() <= 0.01, "bit {i}: {freq}");
        }
        let expected = n as f64 / 256.0;
        let chi2: f64 = cells
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = 1.0 - ChiSquared::new(255.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2={chi2} p={p}");
    }

    #[test]
    fn unit_conversion() {
        assert_eq!(Distance::ZERO.to_unit(), 0.0);
        assert_eq!(Distance::pow2(254).to_unit(), 0.25);
        assert!(Distance::MAX.to_unit() <= 1.0);
        assert_eq!(Distance::pow2(0).bit_length(), 1);
    }

    proptest! {
        #[test]
        fn hex_round_trip(limbs in any::<[u64; 4]>()) {
            let k = Key256::from_limbs(limbs);
            let s = k.to_hex();
            prop_assert_eq!(s.len(), 64);
            prop_assert!(s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)));
            prop_assert_eq!(s.parse::<Key256>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            prop_assert_eq!(serde_json::from_str::<Key256>(&json).unwrap(), k);
            prop_assert_eq!(Key256::from_bytes(k.to_bytes()), k);
        }

        #[test]
        fn distance_order_is_strict(a in any::<[u64; 4]>(), b in any::<[u64; 4]>(), t in any::<[u64; 4]>()) {
            let (a, b, t) = (Key256::from_limbs(a), Key256::from_limbs(b), Key256::from_limbs(t));
            prop_assume!(a != b);
            prop_assert_ne!(xor_distance(a, t), xor_distance(b, t));
        }

        #[test]
        fn unit_matches_top_limb(limbs in any::<[u64; 4]>()) {
            let d = Distance::from_limbs(limbs);
            let approx = limbs[0] as f64 / 2f64.powi(64);
            prop_assert!((d.to_unit() - approx).abs() < 1e-18 + 2f64.powi(-64));
        }
    }
}
