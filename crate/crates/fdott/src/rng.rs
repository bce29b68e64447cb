//! Deterministic random-number streams.
//!
//! Every Monte Carlo draw gets its own generator derived from the user seed
//! and the draw's position, so results do not depend on how work is split
//! across threads. ChaCha8 supports 2^64 independent streams which makes
//! this derivation cheap.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Work-item tags used as stream identifiers, kept distinct per context so
/// that, for example, draw `j` of the sampler and replication `j` of an
/// experiment never share a stream.
#[derive(Debug, Clone, Copy)]
pub enum StreamKind {
    /// Data generation for a replication.
    Data,
    /// One draw of a limit-law sampler.
    Draw,
    /// One experiment replication (sub-seeds are derived from this stream).
    Replication,
    /// Truth generation (random measures).
    Truth,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Data => 1,
            StreamKind::Draw => 2,
            StreamKind::Replication => 3,
            StreamKind::Truth => 4,
        }
    }
}

/// SplitMix64 step, used to whiten seed material.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one unit of work, independent of all other units.
pub fn stream_rng(seed: u64, kind: StreamKind, index: u64) -> ChaCha8Rng {
    let mut state = seed;
    let a = splitmix64(&mut state);
    let mut rng = ChaCha8Rng::seed_from_u64(a);
    rng.set_stream((kind.tag() << 56) ^ index);
    rng
}

/// Derives a sub-seed for nested work (a replication that itself runs a
/// sampler with per-draw streams).
pub fn sub_seed(seed: u64, kind: StreamKind, index: u64) -> u64 {
    let mut state = seed ^ (kind.tag().rotate_left(48)) ^ index.wrapping_mul(0xa076_1d64_78bd_642f);
    let _ = splitmix64(&mut state);
    splitmix64(&mut state)
}
