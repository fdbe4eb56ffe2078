//! Deterministic random streams.
//!
//! Parallel runs draw from one stream per fixed batch index, so results are
//! bit-identical for any worker count: the partition of work into batches
//! never depends on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of fixed work batches for parallel Monte Carlo.
pub const BATCHES: u64 = 512;
/// Stream offset reserved for pilot runs so they never collide with batches.
pub const PILOT_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Draws an index from unnormalized nonnegative weights.
    pub fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0, "all weights vanish");
        let mut target = self.unit() * total;
        for (i, &w) in weights.iter().enumerate() {
            target -= w;
            if target < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }
}

/// Splits n items into the fixed number of batches; batch b gets sizes[b]
/// items and reads stream `b`, independent of how batches map to threads.
pub fn batch_sizes(n: u64) -> Vec<u64> {
    let b = BATCHES.min(n.max(1));
    let base = n / b;
    let extra = n % b;
    (0..b).map(|i| base + u64::from(i < extra)).collect()
}
