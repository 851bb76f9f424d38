//! Deterministic seed fan-out.
//!
//! One master seed reproduces an entire run. Every consumer (partitioning,
//! parameter init, per-round sampling, per-client training, codec masks)
//! derives its own independent stream keyed by a label plus integer indices,
//! so concurrent clients never share RNG state and scheduling order cannot
//! change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const LABEL_END: u64 = 0xA076_1D64_78BD_642F;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master`, a stream label, and integer indices
/// (round, client id, attempt, ...). Stable across runs and platforms.
pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(master ^ GOLDEN);
    for &b in label.as_bytes() {
        h = splitmix(h ^ (u64::from(b)).wrapping_mul(GOLDEN));
    }
    h = splitmix(h ^ LABEL_END);
    for &ix in indices {
        h = splitmix(h ^ ix.wrapping_mul(GOLDEN));
    }
    h
}

/// Seeded generator for the derived stream.
pub fn stream(master: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, indices))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        assert_eq!(
            derive_seed(42, "partition", &[]),
            derive_seed(42, "partition", &[])
        );
    }

    #[test]
    fn labels_and_indices_separate_streams() {
        let base = derive_seed(7, "sample", &[1]);
        assert_ne!(base, derive_seed(7, "sample", &[2]));
        assert_ne!(base, derive_seed(7, "train", &[1]));
        assert_ne!(base, derive_seed(8, "sample", &[1]));
        // one round / two clients vs. two rounds / one client must differ
        assert_ne!(
            derive_seed(7, "train", &[1, 2]),
            derive_seed(7, "train", &[2, 1])
        );
    }

    #[test]
    fn streams_reproduce() {
        use rand::Rng;
        let a: Vec<u64> = stream(3, "x", &[0]).random_iter().take(8).collect();
        let b: Vec<u64> = stream(3, "x", &[0]).random_iter().take(8).collect();
        assert_eq!(a, b);
    }
}
