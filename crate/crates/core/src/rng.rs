//! Seed derivation and counter-based random streams.
//!
//! Every random draw in the workspace comes from a ChaCha8 stream keyed by a
//! 64-bit seed and a 64-bit stream index (usually the trial or episode index).
//! Within a stream, draws are consumed in a fixed order, so the word position
//! plays the role of the sample index. A stream never depends on which thread
//! consumes it, which is what makes parallel runs replay bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `master`, one SplitMix64 round per part.
///
/// `derive_seed(s, &[a, b])` differs from `derive_seed(s, &[b, a])`, so
/// sub-seeds for different purposes never collide by permutation.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// 64-bit FNV-1a of a label, used to key seeds by experiment kind.
pub fn label_key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
