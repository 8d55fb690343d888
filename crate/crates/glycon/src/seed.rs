//! Deterministic seed derivation.
//!
//! Every random stream in the crate is derived from a root seed plus a list
//! of integer tags (patient index, arm, purpose). Streams are therefore
//! stable across thread counts and run orders.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, cheap, stable.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed and a tag path.
pub fn derive(root: u64, tags: &[u64]) -> u64 {
    let mut s = mix(root);
    for &t in tags {
        s = mix(s ^ mix(t));
    }
    s
}

/// Seeded RNG for a derived stream.
pub fn rng(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tags))
}

/// Stream tags used by the trial runner. Kept in one place so seed layouts
/// never collide between subsystems.
pub mod tag {
    pub const NUTRITION_SCHEDULE: u64 = 1;
    pub const INSULIN_SCHEDULE: u64 = 2;
    pub const PATIENT_PARAMS: u64 = 3;
    pub const MEASUREMENT_TIMES: u64 = 4;
    pub const TTW_NOISE: u64 = 5;
    pub const ARM_NOISE: u64 = 6;
    pub const ASSIGNMENT: u64 = 7;
    pub const FIT: u64 = 8;
}
