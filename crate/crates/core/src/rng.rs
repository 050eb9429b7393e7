//! Reproducible substream derivation for parallel Monte Carlo.
//!
//! One master seed spawns independent substreams through the ChaCha stream
//! counter: substream `(domain, index)` uses the ChaCha8 generator seeded with
//! the master seed and stream id `domain << 56 | index`. A substream is a pure
//! function of `(master, domain, index)`, so path `i` is bit-identical
//! regardless of how work is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random-number domains carved out of the ChaCha stream space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    /// Outer simulation paths.
    Path,
    /// Inner (nested) simulation paths; index is the owning outer path.
    Inner,
    /// Execution (fill) uniforms in the backtest engine.
    Fill,
    /// Pricing calls issued along a hedging or recalibration schedule.
    Schedule,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Path => 1,
            StreamDomain::Inner => 2,
            StreamDomain::Fill => 3,
            StreamDomain::Schedule => 4,
        }
    }
}

/// Derives the substream `(domain, index)` of a master seed.
///
/// Indices must stay below 2^56 so they cannot collide across domains.
pub fn substream(master: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << 56), "substream index overflows domain tag");
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((domain.tag() << 56) | index);
    rng
}
