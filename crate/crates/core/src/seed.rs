//! Seed derivation. Every random stream in the pipeline is a ChaCha8 generator
//! seeded from a master seed mixed with a stage label and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the stage label.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derive a sub-seed from `(master, stage, index)`.
pub fn derive(master: u64, stage: &str, index: u64) -> u64 {
    mix64(mix64(master ^ label_hash(stage)).wrapping_add(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_separates_stages_and_indices() {
        let a = derive(7, "split", 0);
        assert_eq!(a, derive(7, "split", 0));
        assert_ne!(a, derive(7, "split", 1));
        assert_ne!(a, derive(7, "oracle", 0));
        assert_ne!(a, derive(8, "split", 0));
    }
}
