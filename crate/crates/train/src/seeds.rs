//! Stateless seed derivation.
//!
//! Every random draw in a run is keyed by (run seed, purpose salt, step,
//! index) through a splitmix64 chain, so no RNG state is ever serialized:
//! resuming at step s replays exactly the stream an uninterrupted run would
//! have produced from that step on.

/// Episode sampling during training steps.
pub const SALT_EPISODE: u64 = 0x4550_4953;
/// Unlabeled-sample masking.
pub const SALT_MASK: u64 = 0x4d41_534b;
/// Evaluation episodes.
pub const SALT_EVAL: u64 = 0x4556_414c;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the parts left to right; order is significant.
pub fn derive_seed(parts: [u64; 4]) -> u64 {
    parts.iter().fold(0u64, |h, &p| splitmix64(h ^ p))
}
