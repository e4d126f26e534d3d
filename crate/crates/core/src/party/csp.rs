//! CSP role: key and noise generation, decryption with the additive `r`
//! perturbation, and the two responders used during lasso training.

use ndarray::Array2;
use num_bigint::BigInt;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data_owner::NoiseVector;
use super::evaluator::{AggregateBundle, CspChannel};
use super::{PartyError, PlainBundle, Result};
use crate::paillier::{keygen, Ciphertext, FixedDecimal, PrivateKey, PublicKey};
use crate::regression::{cd_update, ModelWeights, RegressionKind};

/// Default bounds for the entries of `r`.
pub const DEFAULT_R_RANGE: (f64, f64) = (2.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CspConfig {
    pub key_bits: usize,
    /// Inclusive bounds of `r_k`, rounded to micro-units.
    pub r_range: (f64, f64),
    pub kind: RegressionKind,
    pub lambda: f64,
}

/// The CSP's secrets and the public regression parameters it needs.
#[derive(Debug, Clone)]
pub struct CspState {
    pk: PublicKey,
    sk: PrivateKey,
    noise: NoiseVector,
    kind: RegressionKind,
    lambda: FixedDecimal,
}

/// Everything the CSP learns from decrypting an aggregated bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct CspView {
    pub q: Vec<f64>,
    /// `ξ ∘ S`, the only form of the cross terms the CSP ever sees.
    pub s_prime: Array2<f64>,
    pub z: Vec<f64>,
    pub dr: Vec<f64>,
}

impl CspState {
    /// Generates the key pair, `r` with `dim` entries, and the initial-weight seed.
    pub fn setup<R: Rng + ?Sized>(config: &CspConfig, dim: usize, rng: &mut R) -> Result<Self> {
        let (lo, hi) = config.r_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(PartyError::Config(format!("invalid noise range [{lo}, {hi}]")));
        }
        let (pk, sk) = keygen(config.key_bits, rng)?;
        let (lo, hi) = ((lo * 1e6).round() as i64, (hi * 1e6).round() as i64);
        let r = (0..dim).map(|_| FixedDecimal::new(BigInt::from(rng.gen_range(lo..=hi)), 1)).collect();
        let noise = NoiseVector { r, seed_w0: rng.gen() };
        Self::from_parts(pk, sk, noise, config.kind, config.lambda)
    }

    pub fn from_parts(pk: PublicKey, sk: PrivateKey, noise: NoiseVector, kind: RegressionKind, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(PartyError::Config(format!("penalty must be non-negative, got {lambda}")));
        }
        Ok(Self { pk, sk, noise, kind, lambda: FixedDecimal::from_f64(lambda, 1)? })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    pub fn noise(&self) -> &NoiseVector {
        &self.noise
    }

    /// Fresh encryptions of every `r_k`, for the Evaluator's comparisons.
    pub fn encrypted_r<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Ciphertext>> {
        self.noise.r.iter().map(|r| Ok(self.pk.encrypt(&self.pk.encode_fixed(r)?, rng))).collect()
    }

    fn decrypt_fixed(&self, c: &Ciphertext, exponent: i32) -> Result<FixedDecimal> {
        if c.exponent != exponent {
            return Err(crate::paillier::PaillierError::ExponentMismatch { left: c.exponent, right: exponent }.into());
        }
        Ok(self.pk.decode_fixed(&self.sk.decrypt(&self.pk, c)?)?)
    }

    fn decrypt_all(&self, bundle: &AggregateBundle) -> Result<RawBundle> {
        bundle.validate()?;
        if bundle.dim() != self.noise.dim() {
            return Err(PartyError::Shape(format!("bundle has {} coordinates, noise has {}", bundle.dim(), self.noise.dim())));
        }
        let vec1 = |v: &[Ciphertext]| v.iter().map(|c| self.decrypt_fixed(c, 1)).collect::<Result<Vec<_>>>();
        Ok(RawBundle {
            q: vec1(&bundle.e_q)?,
            s_prime: bundle
                .e_s
                .iter()
                .map(|row| row.iter().map(|c| self.decrypt_fixed(c, 2)).collect())
                .collect::<Result<_>>()?,
            z: vec1(&bundle.e_z)?,
            dr: vec1(&bundle.e_dr)?,
        })
    }

    /// `Q' = Q + 2ΔR` and `ΔR' = ΔR − D∘r`, where `D = Z` for linear and
    /// lasso and `D = Z + λ` for ridge; `S'` and `Z` pass through.
    pub fn decrypt_and_perturb(&self, bundle: &AggregateBundle) -> Result<PlainBundle> {
        Ok(self.perturb(self.decrypt_all(bundle)?))
    }

    fn perturb(&self, raw: RawBundle) -> PlainBundle {
        let q_prime = raw.q.iter().zip(&raw.dr).map(|(q, dr)| q.add(&dr.add(dr))).collect();
        let dr_prime = raw
            .dr
            .iter()
            .zip(&raw.z)
            .zip(&self.noise.r)
            .map(|((dr, z), r)| {
                let d = match self.kind {
                    RegressionKind::Ridge => z.add(&self.lambda),
                    _ => z.clone(),
                };
                dr.sub(&d.mul(r))
            })
            .collect();
        PlainBundle { q_prime, s_prime: raw.s_prime, z: raw.z, dr_prime }
    }

    /// The plaintext aggregates as the CSP sees them.
    pub fn view(&self, bundle: &AggregateBundle) -> Result<CspView> {
        Ok(Self::view_of(&self.decrypt_all(bundle)?))
    }

    /// [`decrypt_and_perturb`](Self::decrypt_and_perturb) and
    /// [`view`](Self::view) from a single decryption pass.
    pub fn decrypt_with_view(&self, bundle: &AggregateBundle) -> Result<(PlainBundle, CspView)> {
        let raw = self.decrypt_all(bundle)?;
        let view = Self::view_of(&raw);
        Ok((self.perturb(raw), view))
    }

    fn view_of(raw: &RawBundle) -> CspView {
        let f = |v: &[FixedDecimal]| v.iter().map(FixedDecimal::to_f64).collect::<Vec<_>>();
        let d = raw.q.len();
        CspView {
            q: f(&raw.q),
            s_prime: Array2::from_shape_fn((d, d), |(k, j)| raw.s_prime[k][j].to_f64()),
            z: f(&raw.z),
            dr: f(&raw.dr),
        }
    }

    pub fn compare_sign(&self, c: &Ciphertext) -> Result<i8> {
        Ok(self.pk.decode_fixed(&self.sk.decrypt(&self.pk, c)?)?.signum())
    }

    /// The masked plaintext behind `c`.
    pub fn blind_decrypt_respond(&self, c: &Ciphertext) -> Result<FixedDecimal> {
        Ok(self.pk.decode_fixed(&self.sk.decrypt(&self.pk, c)?)?)
    }
}

struct RawBundle {
    q: Vec<FixedDecimal>,
    s_prime: Vec<Vec<FixedDecimal>>,
    z: Vec<FixedDecimal>,
    dr: Vec<FixedDecimal>,
}

/// Direct in-memory access to the CSP.
impl CspChannel for CspState {
    fn compare_sign(&mut self, _coordinate: usize, c: &Ciphertext) -> Result<i8> {
        CspState::compare_sign(self, c)
    }

    fn blind_decrypt(&mut self, c: &Ciphertext) -> Result<FixedDecimal> {
        self.blind_decrypt_respond(c)
    }
}

/// Coordinate descent the CSP could run on what it decrypted, treating the
/// masked cross terms `S'` as if they were `S`.
pub fn attack_demo_csp(
    view: &CspView,
    kind: RegressionKind,
    lambda: f64,
    sweeps: usize,
    w0: &ModelWeights,
) -> Result<ModelWeights> {
    let d = view.q.len();
    if w0.len() != d {
        return Err(PartyError::Shape(format!("{} initial weights for {d} coordinates", w0.len())));
    }
    let mut w = w0.clone();
    for _ in 0..sweeps {
        for k in 0..d {
            let cross: f64 = (0..d).filter(|&j| j != k).map(|j| view.s_prime[[k, j]] * w.0[j]).sum();
            w.0[k] = cd_update(kind, view.q[k] - cross, view.z[k], lambda)
                .map_err(|_| crate::regression::RegressionError::ZeroDenominator { coordinate: k })?;
        }
    }
    Ok(w)
}

/// One linear update of coordinate `k` from reference weights `w` and
/// cross terms `s_row`: `(q_k − Σ_{j≠k} s_kj w_j) / z_k`.
pub fn single_update(q_k: f64, s_row: &[f64], z_k: f64, w: &[f64], k: usize) -> f64 {
    let cross: f64 = s_row.iter().zip(w).enumerate().filter(|(j, _)| *j != k).map(|(_, (s, w))| s * w).sum();
    (q_k - cross) / z_k
}

/// `ε · Σ_j |S_kj w_j / Z_k|` over `j ≠ k`.
pub fn deviation_bound(eps: f64, s_row: &[f64], z_k: f64, w: &[f64], k: usize) -> f64 {
    eps * s_row.iter().zip(w).enumerate().filter(|(j, _)| *j != k).map(|(_, (s, w))| (s * w / z_k).abs()).sum::<f64>()
}
