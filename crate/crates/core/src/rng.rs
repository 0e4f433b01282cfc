//! Keyed random streams: every path draws from its own generator derived
//! from `(master seed, stream index)`, so results never depend on which
//! worker produced them or in what order.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type PathRng = Xoshiro256PlusPlus;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit key of stream `index` under `master`.
pub fn stream_key(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn stream(master: u64, index: u64) -> PathRng {
    PathRng::seed_from_u64(stream_key(master, index))
}

/// Independent master seed for a named sub-experiment (pilot runs, second
/// ensembles) without colliding with the main streams.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    splitmix64(master ^ splitmix64(salt.wrapping_add(0x5851_f42d_4c95_7f2d)))
}
