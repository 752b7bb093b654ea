//! Deterministic, platform-stable hashing for traffic bucketing and seed
//! derivation.
//!
//! Nothing here is cryptographic; the point is that the same unit always
//! lands in the same bucket and the same decision always replays the same
//! random draw, on any machine.

/// FNV-1a over bytes, finished with a SplitMix64 round for bit diffusion.
#[must_use]
pub fn stable_hash64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

#[inline]
#[must_use]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Map a seed to `[0, 1)` with 53-bit precision.
#[must_use]
pub fn u01_from_seed(seed: u64) -> f64 {
    let top = splitmix64(seed) >> 11;
    (top as f64) / ((1u64 << 53) as f64)
}

///// Seed for one decision: stable in `(unit_id, target_id, counter)`.
///
/// Concurrent requests get distinct counters from the registry, so no two
/// in-flight decisions ever share RNG state.
#[must_use]
pub fn decision_seed(unit_id: &str, target_id: &str, counter: u64) -> u64 {
    let base = stable_hash64(unit_id) ^ stable_hash64(target_id).rotate_left(17);
    splitmix64(base ^ counter)
}

/// Traffic bucket in `[0, 1_000_000)` for `(unit_id, target_id)`.
#[must_use]
pub fn traffic_bucket(unit_id: &str, target_id: &str) -> u64 {
    let mut key = String::with_capacity(unit_id.len() + target_id.len() + 1);
    key.push_str(unit_id);
    key.push(':');
    key.push_str(target_id);
    stable_hash64(&key) % 1_000_000
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_deterministic() {
        assert_eq!(stable_hash64("unit-1"), stable_hash64("unit-1"));
        assert_ne!(stable_hash64("unit-1"), stable_hash64("unit-2"));
    }

    #[test]
    fn u01_stays_in_range() {
        for seed in 0..10_000u64 {
            let v = u01_from_seed(seed);
            assert!((0.0..1.0).contains(&v), "u01({seed}) = {v}");
        }
    }

    #[test]
    fn decision_seed_depends_on_every_component() {
        let base = decision_seed("u", "t", 0);
        assert_eq!(base, decision_seed("u", "t", 0));
        assert_ne!(base, decision_seed("v", "t", 0));
        assert_ne!(base, decision_seed("u", "s", 0));
        assert_ne!(base, decision_seed("u", "t", 1));
    }

    #[test]
    fn traffic_bucket_uniformity() {
        // 1M random-ish units at rate 0.1 must land within 0.100 +/- 0.002.
        let mut hits = 0u64;
        for i in 0..1_000_000u64 {
            if traffic_bucket(&format!("unit-{i}"), "target-a") < 100_000 {
                hits += 1;
            }
        }
        let frac = hits as f64 / 1e6;
        assert!((frac - 0.1).abs() < 0.002, "in-traffic fraction {frac}");
    }

    #[test]
    fn traffic_buckets_independent_across_targets() {
        // Joint in-traffic frequency for two targets at rates p and q is p*q.
        let (p, q) = (0.3_f64, 0.2_f64);
        let mut joint = 0u64;
        for i in 0..1_000_000u64 {
            let unit = format!("unit-{i}");
            let in_a = traffic_bucket(&unit, "target-a") < (p * 1e6) as u64;
            let in_b = traffic_bucket(&unit, "target-b") < (q * 1e6) as u64;
            if in_a && in_b {
                joint += 1;
            }
        }
        let frac = joint as f64 / 1e6;
        assert!((frac - p * q).abs() < 0.005, "joint frequency {frac}");
    }
}
