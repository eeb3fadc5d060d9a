//! Counter-based randomness for the background cut.
//!
//! Each `(seed, step, patch)` triple maps to a fixed position in a ChaCha
//! keystream: the seed is the key, the step selects the stream and the patch
//! selects the word offset. A draw therefore does not depend on how many
//! other draws happened before it or in which order patches are visited.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform draw in `[0, 1)` for one patch at one step.
pub fn uniform(seed: u64, step: u64, patch: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    // one f64 consumes two 32-bit words
    rng.set_word_pos(2 * patch as u128);
    rng.random::<f64>()
}

/// Whether a background patch survives this step's random cut.
pub fn keep_background(seed: u64, step: u64, patch: usize, keep_prob: f64) -> bool {
    uniform(seed, step, patch) < keep_prob
}
