//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream whose
//! seed is a pure function of the master seed plus a string path naming the
//! decision site (e.g. `["candidates", user_id, "7"]`). This keeps sampling
//! reproducible across runs and platforms and independent of iteration order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes. Stable across platforms, unlike `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer for avalanche on combined seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a master seed with a sequence of labels into a stream seed.
pub fn derive_seed(master: u64, tags: &[&str]) -> u64 {
    let mut s = splitmix64(master);
    for tag in tags {
        s = splitmix64(s ^ fnv1a64(tag.as_bytes()));
    }
    s
}

/// ChaCha stream for one named decision site.
pub fn rng_for(master: u64, tags: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
