//! Deterministic random streams.
//!
//! Every consumer of randomness derives its generator from an explicit seed
//! and a stream index, so results never depend on worker scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a keystream for the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    PilotNoise = 0x7069_6c6f_745f_6e7a,
    Split = 0x7370_6c69_745f_7368,
    Init = 0x696e_6974_5f77_7473,
    Latent = 0x6c61_7465_6e74_5f7a,
    Shuffle = 0x7368_7566_666c_655f,
    Sample = 0x7361_6d70_6c65_5f73,
}

/// Returns the generator for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain as u64);
    rng.set_stream(index);
    rng
}
