//! Deterministic, portable 64-bit hashing shared by the featurizer and
//! the MinHash family. No per-process randomness.

/// FNV-1a over bytes.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// splitmix64 finalizer; good avalanche for seed mixing.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seeded token hash: mixes the token's content hash with a seed.
pub(crate) fn seeded_hash(token: &str, seed: u64) -> u64 {
    mix64(fnv1a64(token.as_bytes()) ^ seed)
}
