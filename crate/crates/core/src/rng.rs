//! Deterministic random streams keyed by (run seed, image index, iteration).
//!
//! Every stochastic component draws from a stream derived from these
//! coordinates, so results are reproducible regardless of thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Coordinates identifying one reproducible draw sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    image: u64,
    iteration: u64,
    lane: u64,
}

impl RngStream {
    pub fn new(seed: u64, image: u64, iteration: u64) -> RngStream {
        RngStream {
            seed,
            image,
            iteration,
            lane: 0,
        }
    }

    /// Sub-stream for independent randomness within one iteration
    /// (e.g. per-sample transform draws). Lane 0 is the stream itself.
    pub fn lane(&self, lane: u64) -> RngStream {
        RngStream { lane, ..*self }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = splitmix64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        for (i, word) in [self.image, self.iteration, self.lane, 0x6761_746b /* "gatk" */]
            .iter()
            .enumerate()
        {
            state = splitmix64(state ^ word.wrapping_mul(0xbf58_476d_1ce4_e5b9));
            key[i * 8..(i + 1) * 8].copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// Mix a salt into a seed for derived generators (weight init, shuffles).
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
