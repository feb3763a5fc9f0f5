//! Named, independent RNG sub-streams derived from one user seed.

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sub-stream `name` under `base`. Stable across platforms and releases.
pub fn derive_seed(base: u64, name: &str) -> u64 {
    name.bytes().fold(splitmix(base), |h, b| splitmix(h ^ b as u64))
}

/// Seed of the `index`-th member of sub-stream `name`.
pub fn derive_indexed(base: u64, name: &str, index: u64) -> u64 {
    splitmix(derive_seed(base, name) ^ splitmix(index))
}
