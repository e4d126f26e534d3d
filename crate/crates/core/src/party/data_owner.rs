//! Data-owner role: local statistics, their encryption, and denoising.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{PartyError, Result};
use crate::paillier::{Ciphertext, FixedDecimal, PublicKey};
use crate::regression::{mae, Dataset, ModelWeights};

/// The CSP's additive weight mask and the shared initial-weight seed.
/// Identical for every data owner in a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector {
    pub r: Vec<FixedDecimal>,
    pub seed_w0: u64,
}

impl NoiseVector {
    pub fn r_f64(&self) -> Vec<f64> {
        self.r.iter().map(FixedDecimal::to_f64).collect()
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }
}

/// One data owner's horizontal slice of the training data. The rows never
/// leave this type; only encrypted aggregates do.
#[derive(Debug, Clone)]
pub struct LocalShard {
    owner_id: usize,
    data: Dataset,
}

/// Plaintext per-shard statistics; `s` has a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermediates {
    pub q: Vec<f64>,
    pub s: Array2<f64>,
    pub z: Vec<f64>,
}

/// Everything a data owner sends to the Evaluator. All ciphertexts are at
/// exponent 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalContribution {
    pub enc_q: Vec<Ciphertext>,
    pub enc_s: Vec<Vec<Ciphertext>>,
    pub enc_z: Vec<Ciphertext>,
    pub enc_dr: Vec<Ciphertext>,
    pub w_hat0: Vec<f64>,
}

impl LocalContribution {
    pub fn dim(&self) -> usize {
        self.enc_q.len()
    }

    /// `(n+1)^2 + 3(n+1)`.
    pub fn ciphertext_count(&self) -> usize {
        self.enc_q.len() + self.enc_s.iter().map(Vec::len).sum::<usize>() + self.enc_z.len() + self.enc_dr.len()
    }
}

impl LocalShard {
    pub fn new(owner_id: usize, data: Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(PartyError::Shape(format!("shard of owner {owner_id} is empty")));
        }
        Ok(Self { owner_id, data })
    }

    pub fn owner_id(&self) -> usize {
        self.owner_id
    }

    pub fn samples(&self) -> usize {
        self.data.samples()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// `q_k = Σ x_ik y_i`, `s_kj = Σ x_ij x_ik` off the diagonal, `z_k = Σ x_ik²`.
    pub fn compute_intermediates(&self) -> Intermediates {
        let x = self.data.x();
        let q = x.t().dot(self.data.y()).to_vec();
        let mut s = x.t().dot(x);
        let z = s.diag().to_vec();
        s.diag_mut().fill(0.0);
        Intermediates { q, s, z }
    }

    /// Encrypts `q`, `s`, `z` and `Δr = s·r`, and masks the shared initial
    /// weights with `r`.
    pub fn build_contribution<R: Rng + ?Sized>(
        &self,
        noise: &NoiseVector,
        pk: &PublicKey,
        rng: &mut R,
    ) -> Result<LocalContribution> {
        let dim = self.dim();
        if noise.dim() != dim {
            return Err(PartyError::Shape(format!("noise vector has {} entries for {dim} weights", noise.dim())));
        }
        let Intermediates { q, s, z } = self.compute_intermediates();
        let r = noise.r_f64();
        let dr = compute_delta_r(&s, &r)?;
        let mut enc = |v: f64| -> Result<Ciphertext> { Ok(pk.encrypt(&pk.encode(v)?, rng)) };
        let enc_q = q.iter().map(|&v| enc(v)).collect::<Result<_>>()?;
        let enc_s = s.outer_iter().map(|row| row.iter().map(|&v| enc(v)).collect::<Result<_>>()).collect::<Result<_>>()?;
        let enc_z = z.iter().map(|&v| enc(v)).collect::<Result<_>>()?;
        let enc_dr = dr.iter().map(|&v| enc(v)).collect::<Result<_>>()?;
        let w_hat0 = initial_weights(noise.seed_w0, dim).iter().zip(&r).map(|(w, r)| w + r).collect();
        Ok(LocalContribution { enc_q, enc_s, enc_z, enc_dr, w_hat0 })
    }

    pub fn evaluate_local(&self, w: &ModelWeights, test: &Dataset) -> Result<f64> {
        Ok(mae(w, test)?)
    }
}

/// `Δr_k = Σ_j s_kj r_j`.
pub fn compute_delta_r(s: &Array2<f64>, r: &[f64]) -> Result<Vec<f64>> {
    if s.nrows() != r.len() || s.ncols() != r.len() {
        return Err(PartyError::Shape(format!("s is {:?}, r has {} entries", s.dim(), r.len())));
    }
    Ok(s.outer_iter().map(|row| row.iter().zip(r).map(|(a, b)| a * b).sum()).collect())
}

/// Shared initial weights, uniform on `[-1, 1]`.
pub fn initial_weights(seed_w0: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed_w0);
    (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// `w_k = ŵ_k − r_k`.
pub fn denoise(w_hat: &[f64], noise: &NoiseVector) -> Result<ModelWeights> {
    if w_hat.len() != noise.dim() {
        return Err(PartyError::Shape(format!("{} noisy weights for {} noise entries", w_hat.len(), noise.dim())));
    }
    Ok(ModelWeights(w_hat.iter().zip(noise.r.iter()).map(|(w, r)| w - r.to_f64()).collect()))
}
