//! Deterministic random streams for simulation.
//!
//! Every stream is a ChaCha20 generator (256-bit key, 64-bit stream id,
//! 64-bit block counter). The key is expanded from the master seed with
//! `seed_from_u64`, and the stream id selects an independent keystream, so
//! `(master_seed, stream_id)` maps to one reproducible sequence regardless of
//! the order or thread in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// Stream id reserved for parameters fixed across replications of a cell.
pub const CELL_STREAM: u64 = u64::MAX;

/// Generator for replication `stream` under `master_seed`.
pub fn stream(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Generator for per-cell fixed parameters.
pub fn cell_stream(master_seed: u64) -> StreamRng {
    stream(master_seed, CELL_STREAM)
}
