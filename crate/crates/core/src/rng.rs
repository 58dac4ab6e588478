//! Named, reproducible random sub-generators derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Generator for `(seed, label, indices…)`; distinct paths give independent
/// streams and the same path always gives the same stream.
pub fn sub_rng(seed: u64, label: &str, path: &[u64]) -> Rng {
    let mut h = splitmix(seed ^ fnv(label));
    for &p in path {
        h = splitmix(h ^ splitmix(p));
    }
    Rng::seed_from_u64(h)
}
