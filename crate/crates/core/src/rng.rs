//! Deterministic generator streams.
//!
//! Every Monte Carlo loop is split into fixed-size batches indexed from
//! zero. Batch `i` draws from ChaCha stream `i` of the batch seed, so the
//! numbers each batch sees depend only on `(seed, i)` and never on how
//! batches are scheduled across worker threads. Partial results are merged
//! in batch order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for batch `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent child seed, e.g. per sweep point or per purpose.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(index);
    rng.next_u64()
}

/// Splits `total` items into `(batch index, batch length)` pairs.
pub fn batches(total: u64, batch_size: u64) -> impl Iterator<Item = (u64, u64)> {
    let n = total.div_ceil(batch_size);
    (0..n).map(move |i| (i, batch_size.min(total - i * batch_size)))
}
