//! Seeded generator streams. Each consumer draws from its own ChaCha stream
//! so enabling one component never shifts another's random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EMBEDDINGS: u64 = 1;
pub const LAU: u64 = 2;
pub const MLP: u64 = 3;
pub const CONV: u64 = 4;
pub const ENC_INTEREST: u64 = 5;
pub const ENC_FEATURE: u64 = 6;
pub const SHUFFLE: u64 = 10;
pub const VIEWS: u64 = 11;
pub const ROBUSTNESS: u64 = 12;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
