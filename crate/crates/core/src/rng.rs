//! Counter-based random substreams.
//!
//! Every parallel unit of work (an event, a bootstrap iteration, a tree, a
//! Monte Carlo draw) gets its own ChaCha stream addressed by
//! `(master seed, domain, index)`, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags keep substreams of different subsystems disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Weather = 1,
    Feeders = 2,
    Outages = 3,
    Events = 4,
    Bootstrap = 5,
    Forest = 6,
    Nuisance = 7,
    Folds = 8,
    Training = 9,
    Portfolio = 10,
    EvRestart = 11,
    Init = 12,
    Misc = 13,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream `index` of `domain` under `seed`.
pub fn substream(seed: u64, domain: Domain, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(splitmix(seed ^ splitmix(domain as u64)));
    rng.set_stream(index);
    rng
}

/// Derive a child seed, for APIs that take a plain `u64` seed.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(domain as u64)).wrapping_add(index))
}
