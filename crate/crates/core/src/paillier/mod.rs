//! Paillier cryptosystem over arbitrary-precision integers, with fixed-point
//! encoding of signed reals.
//!
//! ```
//! use fcd_core::paillier::keygen;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
//! let (pk, sk) = keygen(128, &mut rng).unwrap();
//! let a = pk.encrypt(&pk.encode(1.25).unwrap(), &mut rng);
//! let b = pk.encrypt(&pk.encode(-2.5).unwrap(), &mut rng);
//! let sum = pk.add(&a, &b).unwrap();
//! assert_eq!(pk.decode(&sk.decrypt(&pk, &sum).unwrap()).unwrap(), -1.25);
//! ```

mod cipher;
mod encoding;
mod keys;
pub mod ops;
pub mod prime;

pub use cipher::Ciphertext;
pub use encoding::{scale, EncodedNumber, FixedDecimal, SCALE_DIGITS};
pub use ops::OpCounts;
pub use keys::{keygen, PrivateKey, PublicKey, DEFAULT_KEY_BITS, MIN_KEY_BITS};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaillierError {
    #[error("key length of {0} bits is below the {min}-bit minimum", min = MIN_KEY_BITS)]
    KeyTooShort(usize),
    #[error("value {value} is outside the signed plaintext range")]
    EncodingOverflow { value: String },
    #[error("cannot encode a non-finite value")]
    NonFinite,
    #[error("exponent mismatch ({left} vs {right})")]
    ExponentMismatch { left: i32, right: i32 },
    #[error("invalid exponent {0}")]
    InvalidExponent(i32),
    #[error("ciphertext is not a unit modulo N^2")]
    MalformedCiphertext,
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("cannot parse decimal {0:?}")]
    Parse(String),
}

/// Serde helpers writing big integers as decimal strings.
pub mod decimal {
    pub mod biguint {
        use num_bigint::BigUint;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
            s.collect_str(v)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
            let text = String::deserialize(d)?;
            if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
                return Err(serde::de::Error::custom(format!("not a decimal integer: {text:?}")));
            }
            text.parse().map_err(serde::de::Error::custom)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::{BigInt, BigUint, RandBigInt};
    use num_traits::One;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(bits: usize, seed: u64) -> (PublicKey, PrivateKey, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (pk, sk) = keygen(bits, &mut rng).unwrap();
        (pk, sk, rng)
    }

    #[test]
    fn keygen_rejects_short_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert_eq!(keygen(32, &mut rng).unwrap_err(), PaillierError::KeyTooShort(32));
    }

    #[test]
    fn keygen_hits_requested_length_and_mu_invariant() {
        for bits in [64usize, 128, 256] {
            let (pk, sk, _) = keys(bits, bits as u64);
            assert_eq!(pk.bits(), bits);
            // mu = L(g^lambda mod N^2)^-1 mod N
            let u = pk.g().modpow(sk.lambda(), pk.n_squared());
            let l = (u - 1u32) / pk.n();
            assert!(((l * sk.mu()) % pk.n()).is_one());
        }
    }

    #[test]
    #[ignore = "1024-bit key generation takes a few seconds"]
    fn keygen_production_length() {
        let (pk, _, _) = keys(1024, 11);
        assert_eq!(pk.bits(), 1024);
    }

    #[test]
    fn zero_round_trip() {
        let (pk, sk, mut rng) = keys(128, 1);
        let c = pk.encrypt(&pk.encode(0.0).unwrap(), &mut rng);
        assert_eq!(pk.decode(&sk.decrypt(&pk, &c).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn random_mantissas_round_trip() {
        let (pk, sk, mut rng) = keys(128, 2);
        for _ in 0..1000 {
            let m = rng.gen_biguint_below(pk.n());
            let e = EncodedNumber::new(m, 1);
            let c = pk.encrypt(&e, &mut rng);
            assert_eq!(sk.decrypt(&pk, &c).unwrap(), e);
        }
    }

    #[test]
    fn encode_examples() {
        let (pk, _, _) = keys(128, 3);
        let e = pk.encode(1.5).unwrap();
        assert_eq!(e.mantissa, BigUint::from(1_500_000u32));
        assert_eq!(e.exponent, 1);
        assert_eq!(pk.encode(0.0).unwrap().mantissa, BigUint::from(0u32));
        assert_eq!(pk.encode(-1.5).unwrap().mantissa, pk.n() - 1_500_000u32);
        assert_eq!(pk.decode(&EncodedNumber::new(BigUint::from(1_500_000u32), 1)).unwrap(), 1.5);
        assert_eq!(pk.decode(&EncodedNumber::new(BigUint::from(0u32), 3)).unwrap(), 0.0);
        assert!((pk.decode(&pk.encode(-0.37).unwrap()).unwrap() + 0.37).abs() <= 1e-6);
    }

    #[test]
    fn encode_rejects_overflow_at_half_modulus() {
        let (pk, _, _) = keys(64, 4);
        let half = BigInt::from(pk.n() >> 1u32);
        assert!(pk.encode_fixed(&FixedDecimal::new(half.clone(), 0)).is_ok());
        assert!(pk.encode_fixed(&FixedDecimal::new(-half.clone(), 0)).is_ok());
        let over = FixedDecimal::new(half + 1, 0);
        assert!(matches!(pk.encode_fixed(&over), Err(PaillierError::EncodingOverflow { .. })));
        assert!(pk.encode(1e40).is_err());
    }

    #[test]
    fn boundary_mantissa_decodes_negative() {
        let (pk, sk, mut rng) = keys(128, 5);
        let top = EncodedNumber::new(pk.n() - 1u32, 1);
        let c = pk.encrypt(&top, &mut rng);
        assert_eq!(pk.decode(&sk.decrypt(&pk, &c).unwrap()).unwrap(), -1e-6);
        // ceil(N/2) is the first negative mantissa.
        let ceil_half = (pk.n() >> 1u32) + 1u32;
        assert_eq!(pk.decode_fixed(&EncodedNumber::new(ceil_half, 0)).unwrap().signum(), -1);
        assert_eq!(pk.decode_fixed(&EncodedNumber::new(pk.n() >> 1u32, 0)).unwrap().signum(), 1);
    }

    #[test]
    fn homomorphic_plus_examples() {
        let (pk, sk, mut rng) = keys(128, 6);
        let enc = |x: f64, rng: &mut ChaCha20Rng| pk.encrypt(&pk.encode(x).unwrap(), rng);
        let dec = |c: &Ciphertext| pk.decode(&sk.decrypt(&pk, c).unwrap()).unwrap();
        let (two, three) = (enc(2.0, &mut rng), enc(3.0, &mut rng));
        assert_eq!(dec(&pk.add(&two, &three).unwrap()), 5.0);
        let x = enc(0.731, &mut rng);
        assert_eq!(dec(&pk.add(&x, &enc(0.0, &mut rng)).unwrap()), 0.731);
        assert_eq!(dec(&pk.add(&enc(1.25, &mut rng), &enc(-2.5, &mut rng)).unwrap()), -1.25);
        let hi = pk.raise_exponent(&two, 2).unwrap();
        assert!(matches!(pk.add(&hi, &three), Err(PaillierError::ExponentMismatch { left: 2, right: 1 })));
    }

    #[test]
    fn scalar_mul_examples() {
        let (pk, sk, mut rng) = keys(128, 7);
        let dec = |c: &Ciphertext| pk.decode_fixed(&sk.decrypt(&pk, c).unwrap()).unwrap();
        let m = pk.encrypt(&pk.encode(4.0).unwrap(), &mut rng);
        assert!(dec(&pk.scalar_mul_int(&m, &BigInt::from(0)).unwrap()).is_zero());
        let two = pk.encrypt(&pk.encode(2.0).unwrap(), &mut rng);
        let six = pk.scalar_mul_int(&two, &BigInt::from(3)).unwrap();
        assert_eq!(six.exponent, 1);
        assert_eq!(dec(&six).to_f64(), 6.0);
        let half = pk.scalar_mul(&m, &pk.encode(0.5).unwrap()).unwrap();
        assert_eq!(half.exponent, 2);
        assert_eq!(dec(&half).to_f64(), 2.0);
        let neg = pk.scalar_mul(&m, &pk.encode(-0.25).unwrap()).unwrap();
        assert_eq!(dec(&neg).to_f64(), -1.0);
        let xi = pk.scalar_mul(&two, &pk.encode(0.1).unwrap()).unwrap();
        assert_eq!(dec(&xi).to_f64(), 0.2);
    }

    #[test]
    fn sub_examples() {
        let (pk, sk, mut rng) = keys(128, 8);
        let enc = |x: f64, rng: &mut ChaCha20Rng| pk.encrypt(&pk.encode(x).unwrap(), rng);
        let dec = |c: &Ciphertext| pk.decode(&sk.decrypt(&pk, c).unwrap()).unwrap();
        assert_eq!(dec(&pk.sub(&enc(5.0, &mut rng), &enc(3.0, &mut rng)).unwrap()), 2.0);
        let x = enc(-7.125, &mut rng);
        assert_eq!(dec(&pk.sub(&x, &x).unwrap()), 0.0);
        assert_eq!(dec(&pk.sub(&enc(1.0, &mut rng), &enc(2.0, &mut rng)).unwrap()), -1.0);
    }

    #[test]
    fn encryption_is_probabilistic() {
        let (pk, _, mut rng) = keys(128, 9);
        let e = pk.encode(2.0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..100 {
            assert!(seen.insert(pk.encrypt(&e, &mut rng).value));
        }
    }

    #[test]
    fn rerandomize_preserves_plaintext() {
        let (pk, sk, mut rng) = keys(128, 10);
        let mut c = pk.encrypt(&pk.encode(-3.5).unwrap(), &mut rng);
        for _ in 0..100 {
            let next = pk.rerandomize(&c, &mut rng);
            assert_ne!(next.value, c.value);
            c = next;
        }
        assert_eq!(pk.decode(&sk.decrypt(&pk, &c).unwrap()).unwrap(), -3.5);
        let zero = pk.encrypt(&pk.encode(0.0).unwrap(), &mut rng);
        let a = pk.rerandomize(&zero, &mut rng);
        let b = pk.rerandomize(&zero, &mut rng);
        assert_ne!(a.value, b.value);
        assert_eq!(pk.decode(&sk.decrypt(&pk, &a).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn decrypt_rejects_non_units() {
        let (pk, sk, _) = keys(128, 11);
        let zero = Ciphertext { value: BigUint::from(0u32), exponent: 1 };
        assert_eq!(sk.decrypt(&pk, &zero).unwrap_err(), PaillierError::MalformedCiphertext);
        let multiple = Ciphertext { value: pk.n().clone(), exponent: 1 };
        assert_eq!(sk.decrypt(&pk, &multiple).unwrap_err(), PaillierError::MalformedCiphertext);
        let too_big = Ciphertext { value: pk.n_squared() + 1u32, exponent: 1 };
        assert_eq!(sk.decrypt(&pk, &too_big).unwrap_err(), PaillierError::MalformedCiphertext);
    }

    #[test]
    fn decrypt_rejects_ciphertexts_under_a_larger_foreign_key() {
        let (pk, sk, _) = keys(128, 11);
        let (other_pk, _, mut rng) = keys(256, 12);
        for x in [0.0, 1.5, -3.0] {
            let foreign = other_pk.encrypt(&other_pk.encode(x).unwrap(), &mut rng);
            assert_eq!(sk.decrypt(&pk, &foreign).unwrap_err(), PaillierError::MalformedCiphertext);
        }
    }

    #[test]
    fn key_records_are_decimal_json() {
        let (pk, sk, _) = keys(64, 12);
        let text = serde_json::to_string(&pk).unwrap();
        assert_eq!(text, format!(r#"{{"version":1,"n":"{}","g":"{}"}}"#, pk.n(), pk.g()));
        let back: PublicKey = serde_json::from_str(&text).unwrap();
        assert_eq!(back, pk);
        let sk_text = serde_json::to_string(&sk).unwrap();
        assert!(sk_text.contains(&sk.lambda().to_string()));
        let sk_back: PrivateKey = serde_json::from_str(&sk_text).unwrap();
        assert_eq!(sk_back, sk);
        assert!(serde_json::from_str::<PublicKey>(&text.replace("\"version\":1", "\"version\":2")).is_err());
    }

    #[test]
    fn ciphertext_json_and_fixed_width() {
        let (pk, _, mut rng) = keys(128, 13);
        let c = pk.encrypt(&pk.encode(1.0).unwrap(), &mut rng);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(text, format!(r#"{{"value":"{}","exponent":1}}"#, c.value));
        assert_eq!(serde_json::from_str::<Ciphertext>(&text).unwrap(), c);
        assert_eq!(c.to_fixed_bytes(&pk).len(), 2 * 128 / 8);
        assert!(serde_json::from_str::<Ciphertext>(r#"{"value":"-5","exponent":1}"#).is_err());
    }
}
