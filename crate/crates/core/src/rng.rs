//! Seeded randomness with independent counter-based streams.
//!
//! Every random quantity (matrix block, signal, noise, Monte-Carlo draw)
//! gets its own ChaCha stream derived from `(base seed, trial, lane)`, so a
//! distributed worker regenerating its own block sees exactly the bytes a
//! sequential run would have produced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random lanes. Matrix blocks get one lane per processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    MatrixBlock(usize),
    Signal,
    Noise,
    MonteCarlo,
    Scratch(u16),
}

impl Lane {
    fn tag(self) -> u64 {
        match self {
            Lane::MatrixBlock(p) => {
                assert!(p < 0x80, "at most 128 matrix block lanes");
                0x80 + p as u64
            }
            Lane::Signal => 0,
            Lane::Noise => 1,
            Lane::MonteCarlo => 2,
            Lane::Scratch(k) => 0x100 + k as u64,
        }
    }
}

/// Deterministic RNG for `(seed, trial, lane)`.
pub fn stream_rng(seed: u64, trial: u64, lane: Lane) -> ChaCha8Rng {
    assert!(trial < 1 << 46, "trial index out of stream range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 18) | lane.tag());
    rng
}
