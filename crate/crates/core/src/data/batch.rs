use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MissError, Result};

/// Splits `0..n` into batches of sample indices.
///
/// With `shuffle_seed` the order is a seeded permutation and a final partial
/// batch is dropped (training). Without it the order is preserved and the
/// partial batch is kept (evaluation).
pub fn make_batches(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(MissError::Config(format!("batch_size must be >= 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match shuffle_seed {
        Some(seed) => {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            Ok(order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
        }
        None => Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect()),
    }
}
