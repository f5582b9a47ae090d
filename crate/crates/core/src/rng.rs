//! Reproducible random streams.
//!
//! Every random draw comes from a ChaCha8 generator whose 256-bit key is
//! `(seed, domain, a, b)` (four little-endian u64 words) and whose stream
//! number is `c`. Estimation runs use `(seed, PROBE, pair, repetition)`
//! with the probe index as stream, so each probe of each run owns an
//! independent generator no matter how runs are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tag for sampling the true phase pairs of a campaign.
pub const DOMAIN_PHASE_PAIRS: u64 = 0x5048_4153_4553; // "PHASES"
/// Domain tag for everything that happens during one probe.
pub const DOMAIN_PROBE: u64 = 0x50_524f_4245; // "PROBE"

pub fn stream(seed: u64, domain: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, domain, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(c);
    rng
}

/// Generator for probe `probe` of repetition `rep` on phase pair `pair`.
pub fn probe_rng(seed: u64, pair: usize, rep: usize, probe: usize) -> ChaCha8Rng {
    stream(seed, DOMAIN_PROBE, pair as u64, rep as u64, probe as u64)
}

pub fn phase_pair_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, DOMAIN_PHASE_PAIRS, 0, 0, 0)
}
