//! Deterministic random-stream splitting.
//!
//! Every replication draws from its own ChaCha8 stream derived from
//! `(master_seed, stream_index)`. Results are therefore independent of how
//! replications are scheduled across workers.

use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream `stream` of the master seed.
pub fn stream_for(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut state = master_seed ^ splitmix64(&mut { stream });
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stream index blocks, so independent phases of one experiment never reuse
/// a replication's stream.
pub mod blocks {
    pub const REPLICATION: u64 = 0;
    pub const BOOTSTRAP: u64 = 1 << 40;
    pub const REFERENCE: u64 = 1 << 41;
    pub const LIMIT: u64 = 1 << 42;
    pub const AUX: u64 = 1 << 43;
}
