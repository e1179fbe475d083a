//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit `&mut StreamRng`. Independent
//! purposes (Lipschitz estimation, training, evaluation, one stream per
//! evaluation matrix) use distinct ChaCha stream ids under the same seed, so
//! runs are replayable and draws for one purpose never shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids reserved for the experiment pipeline.
pub mod purpose {
    pub const PROBLEM: u64 = 0;
    pub const LIPSCHITZ: u64 = 1;
    pub const TRAINING: u64 = 2;
    pub const EVALUATION: u64 = 3;
    /// Per-matrix evaluation streams start here and are offset by the matrix index.
    pub const EVALUATION_MATRIX_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
