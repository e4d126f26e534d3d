use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{EncodedNumber, FixedDecimal};
use super::prime::random_prime;
use super::{decimal, PaillierError};

pub const MIN_KEY_BITS: usize = 64;
pub const DEFAULT_KEY_BITS: usize = 1024;
const KEY_RECORD_VERSION: u32 = 1;

/// Paillier public key `(N, g)` with `N^2` cached.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PublicKeyRecord", into = "PublicKeyRecord")]
pub struct PublicKey {
    n: BigUint,
    g: BigUint,
    n_squared: BigUint,
    /// `floor(N/2)`: the largest magnitude a signed plaintext may take.
    max_magnitude: BigUint,
    g_is_n_plus_one: bool,
}

/// Paillier private key `(lambda, mu)`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PrivateKeyRecord", into = "PrivateKeyRecord")]
pub struct PrivateKey {
    lambda: BigUint,
    mu: BigUint,
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PrivateKey { .. }")
    }
}

/// Generates a key pair whose modulus has exactly `key_bits` bits.
///
/// Uses `g = N + 1`, which is always a unit of `Z_{N^2}` and makes `g^m`
/// a single multiplication.
pub fn keygen<R: Rng + ?Sized>(
    key_bits: usize,
    rng: &mut R,
) -> Result<(PublicKey, PrivateKey), PaillierError> {
    if key_bits < MIN_KEY_BITS {
        return Err(PaillierError::KeyTooShort(key_bits));
    }
    let p_bits = key_bits / 2;
    let q_bits = key_bits - p_bits;
    loop {
        let p = random_prime(p_bits, rng);
        let q = random_prime(q_bits, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let p1 = &p - 1u32;
        let q1 = &q - 1u32;
        if !n.gcd(&(&p1 * &q1)).is_one() {
            continue;
        }
        debug_assert_eq!(n.bits(), key_bits as u64);
        let lambda = p1.lcm(&q1);
        let g = &n + 1u32;
        let pk = PublicKey::new(n, g)?;
        match PrivateKey::derive(&pk, lambda) {
            Some(sk) => return Ok((pk, sk)),
            None => continue,
        }
    }
}

impl PublicKey {
    pub fn new(n: BigUint, g: BigUint) -> Result<Self, PaillierError> {
        if n.bits() < MIN_KEY_BITS as u64 || n.is_even() {
            return Err(PaillierError::MalformedKey("modulus must be odd and at least 64 bits".into()));
        }
        let n_squared = &n * &n;
        if g.is_zero() || g >= n_squared || !g.gcd(&n).is_one() {
            return Err(PaillierError::MalformedKey("g is not a unit modulo N^2".into()));
        }
        let g_is_n_plus_one = g == &n + 1u32;
        let max_magnitude = &n >> 1u32;
        Ok(Self { n, g, n_squared, max_magnitude, g_is_n_plus_one })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    /// Bit length of `N`.
    pub fn bits(&self) -> usize {
        self.n.bits() as usize
    }

    /// Size in bytes of a fixed-width ciphertext, `2 * |N| / 8` rounded up.
    pub fn ciphertext_bytes(&self) -> usize {
        (2 * self.bits()).div_ceil(8)
    }

    /// Encodes a real at exponent 1.
    pub fn encode(&self, x: f64) -> Result<EncodedNumber, PaillierError> {
        self.encode_at(x, 1)
    }

    pub fn encode_at(&self, x: f64, exponent: u32) -> Result<EncodedNumber, PaillierError> {
        self.encode_fixed(&FixedDecimal::from_f64(x, exponent)?)
    }

    /// Maps a signed fixed-point value into `Z_N`.
    pub fn encode_fixed(&self, value: &FixedDecimal) -> Result<EncodedNumber, PaillierError> {
        let m = value.mantissa();
        let magnitude = m.magnitude();
        if *magnitude > self.max_magnitude {
            return Err(PaillierError::EncodingOverflow { value: value.to_string() });
        }
        let mantissa = if m.is_negative() { &self.n - magnitude } else { magnitude.clone() };
        Ok(EncodedNumber::new(mantissa, value.exponent() as i32))
    }

    /// Raw integer scalar at exponent 0.
    pub fn encode_int(&self, k: &BigInt) -> Result<EncodedNumber, PaillierError> {
        self.encode_fixed(&FixedDecimal::new(k.clone(), 0))
    }

    /// Signed value of an encoding; mantissas at or above `ceil(N/2)` are negative.
    pub fn decode_fixed(&self, e: &EncodedNumber) -> Result<FixedDecimal, PaillierError> {
        if e.exponent < 0 {
            return Err(PaillierError::InvalidExponent(e.exponent));
        }
        if e.mantissa >= self.n {
            return Err(PaillierError::EncodingOverflow { value: e.mantissa.to_string() });
        }
        let m = if e.mantissa > self.max_magnitude {
            BigInt::from(e.mantissa.clone()) - BigInt::from(self.n.clone())
        } else {
            BigInt::from(e.mantissa.clone())
        };
        Ok(FixedDecimal::new(m, e.exponent as u32))
    }

    pub fn decode(&self, e: &EncodedNumber) -> Result<f64, PaillierError> {
        Ok(self.decode_fixed(e)?.to_f64())
    }

    /// `g^m mod N^2`.
    pub(crate) fn g_pow(&self, m: &BigUint) -> BigUint {
        if self.g_is_n_plus_one {
            (BigUint::one() + m * &self.n) % &self.n_squared
        } else {
            self.g.modpow(m, &self.n_squared)
        }
    }

    /// Fresh `rho^N mod N^2` for a random unit `rho` of `Z_N`.
    pub(crate) fn random_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let rho = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if rho.gcd(&self.n).is_one() {
                return rho.modpow(&self.n, &self.n_squared);
            }
        }
    }

    pub(crate) fn is_unit(&self, c: &BigUint) -> bool {
        !c.is_zero() && *c < self.n_squared && c.gcd(&self.n).is_one()
    }
}

impl PrivateKey {
    fn derive(pk: &PublicKey, lambda: BigUint) -> Option<Self> {
        let u = pk.g.modpow(&lambda, &pk.n_squared);
        let l = (u - 1u32) / &pk.n;
        let mu = l.modinv(&pk.n)?;
        Some(Self { lambda, mu })
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }
}

#[derive(Serialize, Deserialize)]
struct PublicKeyRecord {
    version: u32,
    #[serde(with = "decimal::biguint")]
    n: BigUint,
    #[serde(with = "decimal::biguint")]
    g: BigUint,
}

impl From<PublicKey> for PublicKeyRecord {
    fn from(pk: PublicKey) -> Self {
        Self { version: KEY_RECORD_VERSION, n: pk.n, g: pk.g }
    }
}

impl TryFrom<PublicKeyRecord> for PublicKey {
    type Error = PaillierError;

    fn try_from(r: PublicKeyRecord) -> Result<Self, Self::Error> {
        if r.version != KEY_RECORD_VERSION {
            return Err(PaillierError::MalformedKey(format!("unsupported key record version {}", r.version)));
        }
        PublicKey::new(r.n, r.g)
    }
}

#[derive(Serialize, Deserialize)]
struct PrivateKeyRecord {
    version: u32,
    #[serde(with = "decimal::biguint")]
    lambda: BigUint,
    #[serde(with = "decimal::biguint")]
    mu: BigUint,
}

impl From<PrivateKey> for PrivateKeyRecord {
    fn from(sk: PrivateKey) -> Self {
        Self { version: KEY_RECORD_VERSION, lambda: sk.lambda, mu: sk.mu }
    }
}

impl TryFrom<PrivateKeyRecord> for PrivateKey {
    type Error = PaillierError;

    fn try_from(r: PrivateKeyRecord) -> Result<Self, Self::Error> {
        if r.version != KEY_RECORD_VERSION {
            return Err(PaillierError::MalformedKey(format!("unsupported key record version {}", r.version)));
        }
        Ok(Self { lambda: r.lambda, mu: r.mu })
    }
}
