//! Seeded random streams. Each consumer draws from its own ChaCha stream
//! so that components can be regenerated independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const RESPIRATION: u64 = 1;
pub const MOTION: u64 = 2;
pub const BOLD: u64 = 3;
pub const SCAN_SEEDS: u64 = 4;
pub const SPLIT: u64 = 10;
pub const INIT: u64 = 20;
pub const SHUFFLE: u64 = 21;
pub const PERMUTATION: u64 = 30;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
