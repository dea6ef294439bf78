//! Seeded random streams keyed by `(seed, replicate, stream)`.
//!
//! Every replicate of a study draws from its own generator, so results do not
//! depend on the order in which a work pool happens to execute replicates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams used inside one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    FeatureParams = 1,
    Features = 2,
    Response = 3,
    Sampler = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one `(seed, replicate, stream)` triple.
pub fn stream_rng(seed: u64, replicate: u64, stream: Stream) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(replicate.wrapping_add(0x5151)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream as u64);
    rng
}

/// Derives a child seed, e.g. the sampler seed for replicate `r` of a study.
pub fn derive_seed(seed: u64, replicate: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ replicate)
}
