//! Fixed-point encoding of signed reals into `Z_N`.
//!
//! A real `x` is scaled by `c = 10^6` once per exponent step and rounded to
//! the nearest integer. Positive values occupy `[0, N/2]`, negative values
//! are folded into `[N/2, N)`. The exponent counts how many factors of `c`
//! the integer carries, so products of two encoded values (exponent 2) stay
//! exactly decodable.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{Float, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::PaillierError;

/// Decimal digits per exponent step (`c = 10^6`).
pub const SCALE_DIGITS: u32 = 6;

/// `10^(6 * exponent)` as a big integer.
pub fn scale(exponent: u32) -> BigUint {
    BigUint::from(10u32).pow(SCALE_DIGITS * exponent)
}

/// A signed fixed-point number `mantissa * 10^(-6 * exponent)`.
///
/// This is the plaintext form used on the wire for decrypted quantities: it
/// keeps every digit the ciphertext carried, so arithmetic on it (the CSP's
/// perturbation, the Evaluator's removal of the multiplicative noise) is
/// exact.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FixedDecimal {
    mantissa: BigInt,
    exponent: u32,
}

impl FixedDecimal {
    pub fn new(mantissa: BigInt, exponent: u32) -> Self {
        Self { mantissa, exponent }
    }

    pub fn zero(exponent: u32) -> Self {
        Self::new(BigInt::zero(), exponent)
    }

    pub fn from_int(value: i64) -> Self {
        Self::new(BigInt::from(value), 0)
    }

    /// Rounds `x * 10^(6 * exponent)` to the nearest integer, ties away
    /// from zero. The conversion is exact on the binary value of `x`.
    pub fn from_f64(x: f64, exponent: u32) -> Result<Self, PaillierError> {
        if !x.is_finite() {
            return Err(PaillierError::NonFinite);
        }
        if x == 0.0 {
            return Ok(Self::zero(exponent));
        }
        let (mant, exp2, sign) = Float::integer_decode(x);
        let mut numerator = BigInt::from(mant) * BigInt::from(scale(exponent));
        let magnitude = if exp2 >= 0 {
            numerator <<= exp2 as usize;
            numerator
        } else {
            let shift = (-exp2) as usize;
            let half = BigInt::from(1u8) << (shift - 1);
            (numerator + half) >> shift
        };
        let mantissa = if sign < 0 { -magnitude } else { magnitude };
        Ok(Self::new(mantissa, exponent))
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mantissa
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn signum(&self) -> i8 {
        match self.mantissa.sign() {
            Sign::Minus => -1,
            Sign::NoSign => 0,
            Sign::Plus => 1,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        let m = self.mantissa.to_f64().unwrap_or(f64::NAN);
        if self.exponent == 0 {
            return m;
        }
        // 10^6, 10^12 and 10^18 are exact doubles; larger scales are split.
        let mut value = m;
        let mut remaining = self.exponent;
        while remaining > 0 {
            let step = remaining.min(3);
            value /= 10f64.powi((SCALE_DIGITS * step) as i32);
            remaining -= step;
        }
        value
    }

    /// Re-expresses the value at a higher exponent without loss.
    pub fn raise_to(&self, exponent: u32) -> Self {
        assert!(exponent >= self.exponent, "raise_to cannot lower the exponent");
        Self::new(
            &self.mantissa * BigInt::from(scale(exponent - self.exponent)),
            exponent,
        )
    }

    /// Exact product; exponents add.
    pub fn mul(&self, other: &FixedDecimal) -> Self {
        Self::new(&self.mantissa * &other.mantissa, self.exponent + other.exponent)
    }

    /// Exact sum at the larger of the two exponents.
    pub fn add(&self, other: &FixedDecimal) -> Self {
        let e = self.exponent.max(other.exponent);
        Self::new(self.raise_to(e).mantissa + other.raise_to(e).mantissa, e)
    }

    pub fn sub(&self, other: &FixedDecimal) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        Self::new(-&self.mantissa, self.exponent)
    }

    /// Divides by `divisor`, returning `None` unless the quotient is exact at
    /// exponent `self.exponent - divisor.exponent`.
    pub fn div_exact(&self, divisor: &FixedDecimal) -> Option<Self> {
        if divisor.is_zero() || divisor.exponent > self.exponent {
            return None;
        }
        let (q, r) = self.mantissa.div_rem(&divisor.mantissa);
        r.is_zero().then(|| Self::new(q, self.exponent - divisor.exponent))
    }
}

impl fmt::Display for FixedDecimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = (SCALE_DIGITS * self.exponent) as usize;
        let abs = self.mantissa.abs().to_str_radix(10);
        let sign = if self.mantissa.is_negative() { "-" } else { "" };
        if digits == 0 {
            return write!(f, "{sign}{abs}");
        }
        let padded = format!("{abs:0>width$}", width = digits + 1);
        let (int_part, frac_part) = padded.split_at(padded.len() - digits);
        write!(f, "{sign}{int_part}.{frac_part}")
    }
}

impl FromStr for FixedDecimal {
    type Err = PaillierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PaillierError::Parse(s.to_string());
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty()
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let exponent = (frac_part.len() as u32).div_ceil(SCALE_DIGITS);
        let pad = (exponent * SCALE_DIGITS) as usize - frac_part.len();
        let digits = format!("{int_part}{frac_part}{}", "0".repeat(pad));
        let magnitude = BigInt::from_str(&digits).map_err(|_| bad())?;
        Ok(Self::new(if negative { -magnitude } else { magnitude }, exponent))
    }
}

impl Serialize for FixedDecimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FixedDecimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A plaintext in `Z_N` together with its fixed-point exponent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedNumber {
    pub mantissa: BigUint,
    pub exponent: i32,
}

impl EncodedNumber {
    pub fn new(mantissa: BigUint, exponent: i32) -> Self {
        Self { mantissa, exponent }
    }
}
