/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent child seed for a named stream under `base`.
pub fn derive_seed(base: u64, stream: &str) -> u64 {
    let mut h = mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15));
    for b in stream.bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}
