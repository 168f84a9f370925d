//! Named sub-seeds derived from one run seed.

/// Derives an independent seed for the stream called `name`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then splitmix64 over the combination.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_names_distinct_seeds() {
        assert_ne!(sub_seed(1, "init"), sub_seed(1, "dropout"));
        assert_ne!(sub_seed(1, "init"), sub_seed(2, "init"));
        assert_eq!(sub_seed(7, "order"), sub_seed(7, "order"));
    }
}
