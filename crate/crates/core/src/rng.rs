//! Counter-based RNG stream derivation.
//!
//! Every random quantity is drawn from a ChaCha stream whose seed is a hash of
//! a base seed and a tuple of counters (route, airline, flight, replication
//! ...), so draws do not depend on the order in which they are requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains; keep distinct tags for distinct uses of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    RouteRate = 1,
    Outcome = 2,
    Agent = 3,
    Replication = 4,
    MonteCarlo = 5,
    Session = 6,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed, a domain tag and counters into one 64-bit stream key.
pub fn derive_seed(seed: u64, domain: Domain, counters: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(domain as u64));
    for &c in counters {
        h = splitmix(h ^ splitmix(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, domain: Domain, counters: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, domain, counters))
}
