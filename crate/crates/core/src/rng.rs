//! Counter-based random streams.
//!
//! Every draw in the crate comes from a ChaCha20 generator keyed by the user
//! seed, with the 64-bit stream id encoding `(replicate, role)`. A replicate's
//! data therefore depends only on `(seed, replicate, role)`: not on thread
//! scheduling, and not on how many replicates a run contains.
//!
//! Gaussian variates use `rand_distr::StandardNormal` (Ziggurat).

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a stream is used for. The discriminant is part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Design = 0,
    Noise = 1,
    Split = 2,
    Aux = 3,
}

const ROLES: u64 = 4;

pub fn stream(seed: u64, replicate: u64, role: Role) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate.wrapping_mul(ROLES).wrapping_add(role as u64));
    rng
}
