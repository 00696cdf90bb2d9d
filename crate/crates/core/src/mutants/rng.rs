//! Counter-addressed random streams.
//!
//! Streams are ChaCha8 keyed by the user seed, with the 64-bit ChaCha stream
//! (nonce) split into a generator id (high 16 bits) and an item index (low
//! 48 bits). Item `i` of generator `g` therefore never depends on item
//! `i − 1`, and different generators never share keystream.

use rand::SeedableRng;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

/// Generator ids. Values are part of the reproducibility contract; never
/// renumber them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Stream {
    RiseMasks = 1,
    Coalitions = 2,
    RexPartition = 3,
    Synth = 4,
}

const INDEX_BITS: u32 = 48;

/// Random generator for item `index` of `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << INDEX_BITS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << INDEX_BITS) | (index & ((1 << INDEX_BITS) - 1)));
    rng
}

/// A 64-bit seed derived from item `index` of `stream`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    stream_rng(seed, stream, index).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(seed: u64, stream: Stream, index: u64) -> Vec<u64> {
        let mut rng = stream_rng(seed, stream, index);
        (0..8).map(|_| rng.next_u64()).collect()
    }

    #[test]
    fn same_address_same_values() {
        assert_eq!(draws(7, Stream::Coalitions, 3), draws(7, Stream::Coalitions, 3));
    }

    #[test]
    fn streams_and_indices_are_independent() {
        let base = draws(7, Stream::Coalitions, 3);
        assert_ne!(base, draws(7, Stream::Coalitions, 4));
        assert_ne!(base, draws(7, Stream::RiseMasks, 3));
        assert_ne!(base, draws(8, Stream::Coalitions, 3));
    }

    #[test]
    fn pinned_first_draw() {
        // Stored benchmarks depend on the stream layout.
        assert_eq!(derive_seed(0, Stream::RiseMasks, 0), PINNED);
    }

    const PINNED: u64 = 15_463_945_212_985_891_878;
}
