//! Counter-based seed derivation so that every stochastic unit of work (one
//! SMC run, one restart, one template optimisation) owns an independent,
//! reproducible stream regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// One splitmix64 finalisation step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one seed. Order matters.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x2545_F491_4F6C_DD1D, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Stable 64-bit hash of a string (FNV-1a), for turning names into stream tags.
pub fn tag(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn rng_from(words: &[u64]) -> Rng {
    Rng::seed_from_u64(mix(words))
}
