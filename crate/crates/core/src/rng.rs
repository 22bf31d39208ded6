//! Counter-based random streams.
//!
//! Every `(base_seed, trajectory, step)` triple gets its own ChaCha8 stream,
//! so results do not depend on how trajectories are scheduled on threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream index used for the initial draw `Y_T ~ N(0, I)`.
pub const INIT_STREAM: u64 = 0;

/// The generator for one `(base_seed, index, stream)` triple.
pub fn stream_rng(base_seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&base_seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}
