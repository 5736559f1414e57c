//! Deterministic random-number streams.
//!
//! Every random draw in the crate flows through [`stream_rng`], which keys a
//! counter-based ChaCha8 generator with `(seed, stream, index)`. Streams keep
//! dataset generation, parameter initialization, and minibatch sampling
//! statistically independent even when they share a user-facing seed, and the
//! `index` slot gives sampling a fresh, reproducible generator per step
//! without any sequential state to carry around.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent sub-streams of a single user-facing seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Dataset generation (feature draws, inputs, labels).
    Data,
    /// Model parameter initialization.
    Init,
    /// Minibatch index sampling; `index` carries the step counter.
    Sampling,
    /// Diagnostics probes (random directions, perturbation pairs).
    Probe,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 0x11,
            Stream::Init => 0x22,
            Stream::Sampling => 0x33,
            Stream::Probe => 0x44,
        }
    }
}

/// Builds the generator for `(seed, stream, index)`.
///
/// The 256-bit ChaCha key is the little-endian concatenation of the three
/// identifiers plus a fixed salt, so distinct tuples give unrelated streams
/// and equal tuples give bit-identical draws on every platform.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.id().to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(seed: u64, stream: Stream, index: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, stream, index);
        (0..8).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn same_key_reproduces_same_draws() {
        assert_eq!(draws(7, Stream::Data, 0), draws(7, Stream::Data, 0));
    }

    #[test]
    fn streams_and_indices_are_distinct() {
        let base = draws(7, Stream::Data, 0);
        assert_ne!(base, draws(7, Stream::Init, 0), "streams must differ");
        assert_ne!(base, draws(7, Stream::Data, 1), "indices must differ");
        assert_ne!(base, draws(8, Stream::Data, 0), "seeds must differ");
    }
}
