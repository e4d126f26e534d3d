use num_bigint::{BigInt, BigUint};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{scale, EncodedNumber};
use super::keys::{PrivateKey, PublicKey};
use super::{decimal, ops, PaillierError};

/// A Paillier ciphertext tagged with the fixed-point exponent of the hidden
/// plaintext.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ciphertext {
    #[serde(with = "decimal::biguint")]
    pub value: BigUint,
    pub exponent: i32,
}

impl Ciphertext {
    /// Big-endian bytes left-padded to the fixed ciphertext width of `pk`.
    pub fn to_fixed_bytes(&self, pk: &PublicKey) -> Vec<u8> {
        let raw = self.value.to_bytes_be();
        let width = pk.ciphertext_bytes();
        let mut out = vec![0u8; width.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }
}

impl PublicKey {
    /// `E[m] = g^m * rho^N mod N^2` with fresh randomness.
    pub fn encrypt<R: Rng + ?Sized>(&self, e: &EncodedNumber, rng: &mut R) -> Ciphertext {
        debug_assert!(e.mantissa < *self.n());
        ops::record(|c| c.encryptions += 1);
        let value = (self.g_pow(&e.mantissa) * self.random_mask(rng)) % self.n_squared();
        Ciphertext { value, exponent: e.exponent }
    }

    /// Homomorphic plus: `Dec(a ⊕ b) = Dec(a) + Dec(b)`.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        check_exponents(a.exponent, b.exponent)?;
        ops::record(|c| c.additions += 1);
        Ok(Ciphertext {
            value: (&a.value * &b.value) % self.n_squared(),
            exponent: a.exponent,
        })
    }

    /// Homomorphic scalar multiplication: `Dec(k ⊗ a) = k * Dec(a)`, with the
    /// exponents adding.
    pub fn scalar_mul(&self, a: &Ciphertext, k: &EncodedNumber) -> Result<Ciphertext, PaillierError> {
        let half = self.n() >> 1u32;
        ops::record(|c| c.scalar_muls += 1);
        let value = if k.mantissa > half {
            // Negative scalar: invert the ciphertext and raise to |k|.
            let inverse = a.value.modinv(self.n_squared()).ok_or(PaillierError::MalformedCiphertext)?;
            inverse.modpow(&(self.n() - &k.mantissa), self.n_squared())
        } else {
            a.value.modpow(&k.mantissa, self.n_squared())
        };
        Ok(Ciphertext { value, exponent: a.exponent + k.exponent })
    }

    /// Scalar multiplication by a raw integer (exponent 0).
    pub fn scalar_mul_int(&self, a: &Ciphertext, k: &BigInt) -> Result<Ciphertext, PaillierError> {
        self.scalar_mul(a, &self.encode_int(k)?)
    }

    /// Homomorphic difference `a ⊖ b = a ⊕ ((N-1) ⊗ b)`.
    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        check_exponents(a.exponent, b.exponent)?;
        let minus_one = EncodedNumber::new(self.n() - 1u32, 0);
        self.add(a, &self.scalar_mul(b, &minus_one)?)
    }

    /// Adds a known plaintext without fresh randomness.
    pub fn add_plain(&self, a: &Ciphertext, e: &EncodedNumber) -> Result<Ciphertext, PaillierError> {
        check_exponents(a.exponent, e.exponent)?;
        ops::record(|c| c.additions += 1);
        Ok(Ciphertext {
            value: (&a.value * self.g_pow(&e.mantissa)) % self.n_squared(),
            exponent: a.exponent,
        })
    }

    /// Multiplies the hidden plaintext by `c^(target - exponent)` so it can be
    /// combined with ciphertexts at `target`.
    pub fn raise_exponent(&self, a: &Ciphertext, target: i32) -> Result<Ciphertext, PaillierError> {
        if target < a.exponent {
            return Err(PaillierError::ExponentMismatch { left: a.exponent, right: target });
        }
        if target == a.exponent {
            return Ok(a.clone());
        }
        let factor = EncodedNumber::new(scale((target - a.exponent) as u32), 0);
        let mut out = self.scalar_mul(a, &factor)?;
        out.exponent = target;
        Ok(out)
    }

    /// `a ⊕ E[0]`: same plaintext, unlinkable ciphertext.
    pub fn rerandomize<R: Rng + ?Sized>(&self, a: &Ciphertext, rng: &mut R) -> Ciphertext {
        ops::record(|c| c.rerandomizations += 1);
        Ciphertext {
            value: (&a.value * self.random_mask(rng)) % self.n_squared(),
            exponent: a.exponent,
        }
    }
}

impl PrivateKey {
    /// `m = L(c^lambda mod N^2) * mu mod N`.
    pub fn decrypt(&self, pk: &PublicKey, c: &Ciphertext) -> Result<EncodedNumber, PaillierError> {
        if !pk.is_unit(&c.value) {
            return Err(PaillierError::MalformedCiphertext);
        }
        ops::record(|c| c.decryptions += 1);
        let u = c.value.modpow(self.lambda(), pk.n_squared());
        let l = (u - 1u32) / pk.n();
        Ok(EncodedNumber::new((l * self.mu()) % pk.n(), c.exponent))
    }
}

fn check_exponents(left: i32, right: i32) -> Result<(), PaillierError> {
    if left != right {
        return Err(PaillierError::ExponentMismatch { left, right });
    }
    Ok(())
}
