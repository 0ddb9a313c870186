//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own named sub-stream of one
//! run seed, so adding draws in one place never shifts another.

use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POOL_SAMPLING: &str = "pool-sampling";
pub const PRUNING: &str = "pruning";

/// Independent generator for `name` under `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = fnv::FnvHasher::default();
    h.write(name.as_bytes());
    rng.set_stream(h.finish());
    rng
}
