//! Per-component random streams split off one root seed.
//!
//! Each component draws from its own ChaCha8 stream, so adding draws in one
//! component never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Encoder = 2,
    Policy = 3,
    Frontier = 4,
    Replay = 5,
    Eval = 6,
    Baseline = 7,
    Graph = 8,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
