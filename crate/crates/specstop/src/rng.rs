//! Deterministic stream derivation for parallel Monte Carlo.
//!
//! Every randomised computation draws from a ChaCha8 stream whose 64-bit
//! seed is derived from the master seed and a list of integer tags
//! (sample size, rule id, replication index). Derivation uses the
//! SplitMix64 finalizer, so neighbouring tags map to unrelated streams
//! and replications can run in parallel without shared state.

use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Constants are the ones from the reference
/// implementation by Steele, Lea and Flood.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of tags into a master seed, one avalanche per tag.
pub fn derive_stream(master: u64, tags: &[u64]) -> u64 {
    let mut h = mix64(master);
    for &t in tags {
        h = mix64(h ^ mix64(t));
    }
    h
}

/// FNV-1a over the bytes of `s`; used to tag rule kinds in stream derivation.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Counter-mode stream generator for a derived seed.
pub fn stream_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        // Frozen so that config files with pinned seeds keep their meaning.
        assert_eq!(mix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_stream(42, &[1, 2, 3]), derive_stream(42, &[1, 2, 3]));
    }

    #[test]
    fn tags_separate_streams() {
        let a = derive_stream(7, &[100, 1, 0]);
        let b = derive_stream(7, &[100, 2, 0]);
        let c = derive_stream(7, &[100, 1, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn rule_tags_differ() {
        assert_ne!(hash_str("plain"), hash_str("algorithm1"));
    }
}
