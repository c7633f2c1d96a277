//! Deterministic, hierarchical RNG streams.
//!
//! Every trajectory owns private counter-derived streams so that ensembles
//! are bit-reproducible for any parallel schedule: the stream depends only
//! on (master seed, scan point, atom index, channel), never on execution
//! order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent channels within one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Langevin noise of the atomic motion.
    Physics = 0,
    /// Photon-count shot noise.
    Detection = 1,
    /// Initial-state sampling.
    Init = 2,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit sub-seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x6a09_e667_f3bc_c908);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p ^ 0xbb67_ae85_84ca_a73b));
    }
    state
}

/// A seeded stream for (master, scan point, atom, channel).
pub fn stream(master: u64, point: u64, atom: u64, channel: Channel) -> ChaCha8Rng {
    let seed64 = derive_seed(master, &[point, atom, channel as u64]);
    // Expand to the full 256-bit seed so streams are well separated.
    let mut seed = [0u8; 32];
    let mut s = seed64;
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
