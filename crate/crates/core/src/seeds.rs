//! Seed derivation for reproducible per-sequence random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed. Order-sensitive.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5344_4C42_0000_0001_u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Serde adapter for `u64` seeds in TOML, whose integers are signed 64-bit.
/// Values above `i64::MAX` are written as `0x`-prefixed hex strings; both
/// forms are accepted on input.
pub mod wide {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        if *v <= i64::MAX as u64 {
            s.serialize_i64(*v as i64)
        } else {
            s.serialize_str(&format!("{v:#018x}"))
        }
    }

    struct Wide;

    impl Visitor<'_> for Wide {
        type Value = u64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a non-negative integer or a 0x-prefixed hex string")
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
            u64::try_from(v).map_err(|_| E::custom("seed must be non-negative"))
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
            Ok(v)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
            match v.strip_prefix("0x") {
                Some(hex) => u64::from_str_radix(hex, 16),
                None => v.parse(),
            }
            .map_err(E::custom)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        d.deserialize_any(Wide)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "wide")]
        seed: u64,
    }

    #[test]
    fn wide_seeds_survive_toml() {
        for seed in [0, 7, i64::MAX as u64, i64::MAX as u64 + 1, u64::MAX] {
            let h = Holder { seed };
            assert_eq!(toml::from_str::<Holder>(&toml::to_string(&h).unwrap()).unwrap(), h);
        }
        assert_eq!(toml::from_str::<Holder>("seed = \"0x10\"").unwrap().seed, 16);
        assert!(toml::from_str::<Holder>("seed = -1").is_err());
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(&[1, 2]), mix(&[2, 1]));
        assert_eq!(mix(&[7, 8, 9]), mix(&[7, 8, 9]));
    }

    #[test]
    fn no_collisions_on_a_dense_grid() {
        let mut seen = HashSet::new();
        for a in 0..40u64 {
            for b in 0..2u64 {
                for c in 0..500u64 {
                    assert!(seen.insert(mix(&[42, a, b, c])));
                }
            }
        }
    }
}
