//! Seed-stream derivation. All randomness flows from one master seed through
//! named sub-streams so that components and episodes can be re-run (and run
//! concurrently) without sharing generator state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a over the component name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a 64-bit stream key from (master seed, component label, indices).
pub fn stream_key(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut k = mix(master ^ hash_label(label));
    for ix in indices {
        k = mix(k ^ *ix);
    }
    k
}

/// A ChaCha8 generator for the named sub-stream.
pub fn stream(master: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let key = stream_key(master, label, indices);
    let mut seed = [0u8; 32];
    let mut z = key;
    for chunk in seed.chunks_mut(8) {
        z = mix(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
