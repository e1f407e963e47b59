//! Counter-based derivation of independent random substreams.
//!
//! Every random decision in a run is drawn from a generator seeded by
//! mixing the run seed with the coordinates of the decision (iteration,
//! sample, view, ...), so parallel or reordered evaluation cannot
//! perturb unrelated draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a seed with a sequence of tags into a new seed.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &t in tags {
        acc = splitmix64(acc ^ t.wrapping_mul(0x9e3779b97f4a7c15));
    }
    acc
}

/// Deterministic generator for the substream identified by `tags`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}
