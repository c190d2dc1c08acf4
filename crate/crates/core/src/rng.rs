//! Deterministic per-purpose rng streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids below this are free for configuration (e.g. `radio.stream`).
const SENSOR_BASE: u64 = 1 << 32;
const PRIORS: u64 = 1 << 40;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Noise stream of one sensor; stream id = sensor id.
pub fn sensor_stream(seed: u64, sensor: usize) -> ChaCha8Rng {
    stream(seed, SENSOR_BASE + sensor as u64)
}

pub fn priors_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, PRIORS)
}
