//! Purpose-keyed random streams.
//!
//! Each replication owns one [`RngSet`]: independent ChaCha streams keyed by
//! what the draws are for. Sweeping a parameter that does not itself consume
//! draws (say, the sync degree) therefore perturbs no other stream, which is
//! what makes paired-seed sweeps meaningful.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// What a stream of draws is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Per-node task execution times.
    Durations = 1,
    /// Post-task failure rolls.
    Failure = 2,
    /// Run-boundary join rolls.
    Join = 3,
    /// Finish-time prediction noise.
    Prediction = 4,
    /// Synthetic mobility walks.
    Mobility = 5,
    /// Cluster choice for joining workers.
    Assignment = 6,
}

/// The per-replication set of independent streams.
#[derive(Debug, Clone)]
pub struct RngSet {
    pub durations: ChaCha8Rng,
    pub failure: ChaCha8Rng,
    pub join: ChaCha8Rng,
    pub prediction: ChaCha8Rng,
    pub mobility: ChaCha8Rng,
    pub assignment: ChaCha8Rng,
}

fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

impl RngSet {
    pub fn new(seed: u64) -> Self {
        RngSet {
            durations: stream(seed, Purpose::Durations),
            failure: stream(seed, Purpose::Failure),
            join: stream(seed, Purpose::Join),
            prediction: stream(seed, Purpose::Prediction),
            mobility: stream(seed, Purpose::Mobility),
            assignment: stream(seed, Purpose::Assignment),
        }
    }
}

/// Seed for replication `r` of a base seed.
pub fn replication_seed(base: u64, replication: u32) -> u64 {
    base.wrapping_add(replication as u64)
}
