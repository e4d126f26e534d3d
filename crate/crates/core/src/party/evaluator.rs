//! Evaluator role: ciphertext aggregation, the multiplicative `ξ` mask on
//! the cross terms, and coordinate descent on noisy weights `ŵ = w + r`.
//!
//! For linear and ridge regression the whole training loop runs on
//! plaintext. For lasso the Evaluator must decide which branch of the soft
//! threshold each update falls in without learning `r`, so it asks the CSP
//! for the sign of blinded differences, and coordinates in the zero branch
//! hold their noisy value `ŵ_k = r_k` only as a ciphertext.

use ndarray::Array2;
use num_bigint::{BigInt, RandBigInt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data_owner::LocalContribution;
use super::{check_square, PartyError, PlainBundle, Result};
use crate::paillier::{Ciphertext, FixedDecimal, PublicKey};
use crate::regression::{Branch, RegressionError, RegressionKind, RegressionSpec};

/// Encrypted sums over all data owners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateBundle {
    pub e_q: Vec<Ciphertext>,
    pub e_s: Vec<Vec<Ciphertext>>,
    pub e_z: Vec<Ciphertext>,
    pub e_dr: Vec<Ciphertext>,
}

impl AggregateBundle {
    pub fn dim(&self) -> usize {
        self.e_q.len()
    }

    /// `(n+1)^2 + 3(n+1)`.
    pub fn ciphertext_count(&self) -> usize {
        self.e_q.len() + self.e_s.iter().map(Vec::len).sum::<usize>() + self.e_z.len() + self.e_dr.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.e_z.len() != d || self.e_dr.len() != d {
            return Err(PartyError::Shape("bundle vectors differ in length".into()));
        }
        check_square(&self.e_s, d, "encrypted cross terms")
    }
}

fn fold(pk: &PublicKey, items: impl Iterator<Item = Ciphertext>) -> Result<Ciphertext> {
    let mut acc: Option<Ciphertext> = None;
    for c in items {
        acc = Some(match acc {
            None => c,
            Some(a) => pk.add(&a, &c)?,
        });
    }
    acc.ok_or(PartyError::TooFewContributions(0))
}

/// Element-wise `⊕` over every contribution.
pub fn aggregate(pk: &PublicKey, contribs: &[LocalContribution]) -> Result<AggregateBundle> {
    if contribs.len() < 2 {
        return Err(PartyError::TooFewContributions(contribs.len()));
    }
    let d = contribs[0].dim();
    for c in contribs {
        if c.enc_q.len() != d || c.enc_z.len() != d || c.enc_dr.len() != d || c.w_hat0.len() != d {
            return Err(PartyError::Shape("contributions differ in dimension".into()));
        }
        check_square(&c.enc_s, d, "encrypted cross terms")?;
    }
    let vector = |pick: fn(&LocalContribution) -> &Vec<Ciphertext>| -> Result<Vec<Ciphertext>> {
        (0..d).map(|k| fold(pk, contribs.iter().map(|c| pick(c)[k].clone()))).collect()
    };
    let e_s = (0..d)
        .map(|k| (0..d).map(|j| fold(pk, contribs.iter().map(|c| c.enc_s[k][j].clone()))).collect())
        .collect::<Result<_>>()?;
    Ok(AggregateBundle { e_q: vector(|c| &c.enc_q)?, e_s, e_z: vector(|c| &c.enc_z)?, e_dr: vector(|c| &c.enc_dr)? })
}

/// Every owner derives `ŵ⁰` from the same seed and noise, so all copies
/// must match exactly.
pub fn agreed_initial_weights(contribs: &[LocalContribution]) -> Result<Vec<f64>> {
    let first = contribs.first().ok_or(PartyError::TooFewContributions(0))?;
    if contribs.iter().any(|c| c.w_hat0 != first.w_hat0) {
        return Err(PartyError::InconsistentInitialWeights);
    }
    Ok(first.w_hat0.clone())
}

/// Allowed bands for `ξ`: `(0, low_max] ∪ [high_min, high_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiRanges {
    pub low_max: f64,
    pub high_min: f64,
    pub high_max: f64,
}

impl Default for XiRanges {
    fn default() -> Self {
        Self { low_max: 0.2, high_min: 1.02, high_max: 5.0 }
    }
}

impl XiRanges {
    fn micro(v: f64) -> i64 {
        (v * 1e6).round() as i64
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hmin, hmax) = (Self::micro(self.low_max), Self::micro(self.high_min), Self::micro(self.high_max));
        if lo < 0 || hmin <= lo || hmin > hmax || hmin < 1 {
            return Err(PartyError::Config(format!("invalid xi ranges {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, xi: &FixedDecimal) -> bool {
        let v = xi.raise_to(1.max(xi.exponent()));
        if v.exponent() != 1 {
            return false;
        }
        let m = v.mantissa();
        let in_low = *m >= BigInt::from(1) && *m <= BigInt::from(Self::micro(self.low_max));
        let in_high = *m >= BigInt::from(Self::micro(self.high_min)) && *m <= BigInt::from(Self::micro(self.high_max));
        in_low || in_high
    }

    /// Uniform over the micro-unit grid of both bands combined.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FixedDecimal {
        let low = Self::micro(self.low_max).max(0);
        let (hmin, hmax) = (Self::micro(self.high_min), Self::micro(self.high_max));
        let high = (hmax - hmin + 1).max(0);
        let pick = rng.gen_range(0..low + high);
        let micro = if pick < low { pick + 1 } else { hmin + (pick - low) };
        FixedDecimal::new(BigInt::from(micro), 1)
    }
}

/// The Evaluator's private multiplicative mask, one positive exact decimal
/// per entry of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiMatrix {
    entries: Vec<Vec<FixedDecimal>>,
}

impl XiMatrix {
    /// Validates each entry against `ranges`.
    pub fn new(entries: Vec<Vec<f64>>, ranges: &XiRanges) -> Result<Self> {
        let xi = Self::unprotected(entries)?;
        for (k, row) in xi.entries.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !ranges.contains(v) {
                    return Err(PartyError::InvalidXi { row: k, col: j, value: v.to_string() });
                }
            }
        }
        Ok(xi)
    }

    /// Any positive entries, including `1` (no protection). Used to simulate
    /// attacks.
    pub fn unprotected(entries: Vec<Vec<f64>>) -> Result<Self> {
        let d = entries.len();
        check_square(&entries, d, "xi")?;
        let entries = entries
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let fixed = FixedDecimal::from_f64(v, 1)?;
                        if fixed.signum() <= 0 {
                            return Err(PartyError::InvalidXi { row: k, col: j, value: v.to_string() });
                        }
                        Ok(fixed)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn uniform(dim: usize, value: f64) -> Result<Self> {
        Self::unprotected(vec![vec![value; dim]; dim])
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, ranges: &XiRanges, rng: &mut R) -> Result<Self> {
        ranges.validate()?;
        Ok(Self { entries: (0..dim).map(|_| (0..dim).map(|_| ranges.sample(rng)).collect()).collect() })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, k: usize, j: usize) -> &FixedDecimal {
        &self.entries[k][j]
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.dim(), self.dim()), |(k, j)| self.entries[k][j].to_f64())
    }
}

/// `E[S'_kj] = E[S_kj] ⊗ ξ_kj`; the cross terms move to exponent 2.
pub fn apply_xi(pk: &PublicKey, bundle: &AggregateBundle, xi: &XiMatrix) -> Result<AggregateBundle> {
    bundle.validate()?;
    if xi.dim() != bundle.dim() {
        return Err(PartyError::Shape(format!("xi is {0}x{0}, bundle is {1}x{1}", xi.dim(), bundle.dim())));
    }
    let e_s = bundle
        .e_s
        .iter()
        .enumerate()
        .map(|(k, row)| {
            row.iter().enumerate().map(|(j, c)| Ok(pk.scalar_mul(c, &pk.encode_fixed(xi.get(k, j))?)?)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(AggregateBundle { e_s, ..bundle.clone() })
}

/// `S_kj = S'_kj / ξ_kj`, exactly.
pub fn remove_xi(plain: &PlainBundle, xi: &XiMatrix) -> Result<Vec<Vec<FixedDecimal>>> {
    plain.validate()?;
    if xi.dim() != plain.dim() {
        return Err(PartyError::Shape("xi and decrypted bundle differ in dimension".into()));
    }
    plain
        .s_prime
        .iter()
        .enumerate()
        .map(|(k, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| v.div_exact(xi.get(k, j)).ok_or(PartyError::InexactXiRemoval { row: k, col: j }))
                .collect()
        })
        .collect()
}

/// The Evaluator's per-coordinate noisy weight.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisyWeight {
    /// `ŵ_k = w_k + r_k` in the clear.
    Plain(f64),
    /// Lasso zero branch: `w_k = 0`, so `ŵ_k = r_k`, held only as `E[r_k]`.
    Hidden(Ciphertext),
}

impl NoisyWeight {
    pub fn plain_part(&self) -> f64 {
        match self {
            NoisyWeight::Plain(v) => *v,
            NoisyWeight::Hidden(_) => 0.0,
        }
    }

    pub fn is_hidden(&self) -> bool {
        matches!(self, NoisyWeight::Hidden(_))
    }
}

/// `P'_k` in the clear, or encrypted at exponent 2 when it depends on a
/// hidden weight.
#[derive(Debug, Clone, PartialEq)]
pub enum PPrime {
    Plain(f64),
    Encrypted(Ciphertext),
}

/// Requests the Evaluator makes of the CSP during lasso training.
pub trait CspChannel {
    /// Sign of the plaintext behind `c`.
    fn compare_sign(&mut self, coordinate: usize, c: &Ciphertext) -> Result<i8>;
    /// Plaintext behind `c`, at the ciphertext's exponent.
    fn blind_decrypt(&mut self, c: &Ciphertext) -> Result<FixedDecimal>;
}

/// A channel for sessions that never need the CSP during training.
pub struct NoChannel;

impl CspChannel for NoChannel {
    fn compare_sign(&mut self, _: usize, _: &Ciphertext) -> Result<i8> {
        Err(PartyError::Channel("no CSP channel for this regression kind".into()))
    }

    fn blind_decrypt(&mut self, _: &Ciphertext) -> Result<FixedDecimal> {
        Err(PartyError::Channel("no CSP channel for this regression kind".into()))
    }
}

/// Coordinate update applied to `P'` instead of `P`; yields `w_k + r_k`.
pub fn noisy_update(kind: RegressionKind, p_prime: f64, z: f64, lambda: f64, branch: Branch) -> Result<f64> {
    let denominator = match kind {
        RegressionKind::Ridge => z + lambda,
        _ => z,
    };
    if denominator == 0.0 {
        return Err(RegressionError::ZeroDenominator { coordinate: 0 }.into());
    }
    match (kind, branch) {
        (RegressionKind::Linear | RegressionKind::Ridge, _) => Ok(p_prime / denominator),
        (RegressionKind::Lasso, Branch::Positive) => Ok((p_prime - lambda / 2.0) / z),
        (RegressionKind::Lasso, Branch::Negative) => Ok((p_prime + lambda / 2.0) / z),
        (RegressionKind::Lasso, Branch::Zero) => {
            Err(PartyError::Corruption("zero branch has no plaintext update".into()))
        }
    }
}

const RHO_MIN: u64 = 1 << 8;
const RHO_MAX: u64 = 1 << 20;

/// Sign-based branch test of `P_k` against `±λ/2`.
///
/// Builds `E[P_k] = E[P'_k] ⊖ Z_k ⊗ E[r_k]`, and for each threshold `τ` asks
/// the CSP for the sign of `ρ (P_k − τ)` with a fresh `ρ > 0`.
#[allow(clippy::too_many_arguments)]
pub fn lasso_branch<R: Rng + ?Sized>(
    pk: &PublicKey,
    k: usize,
    e_p_prime: &Ciphertext,
    e_r_k: &Ciphertext,
    z_k: &FixedDecimal,
    lambda: f64,
    channel: &mut dyn CspChannel,
    rng: &mut R,
) -> Result<Branch> {
    let e_p = pk.sub(e_p_prime, &pk.scalar_mul(e_r_k, &pk.encode_fixed(z_k)?)?)?;
    let exponent = e_p.exponent as u32;
    let mut sign_at = |tau: f64| -> Result<i8> {
        let neg_tau = FixedDecimal::from_f64(-tau, exponent)?;
        let diff = pk.add_plain(&e_p, &pk.encode_fixed(&neg_tau)?)?;
        let rho = BigInt::from(rng.gen_range(RHO_MIN..=RHO_MAX));
        channel.compare_sign(k, &pk.scalar_mul_int(&diff, &rho)?)
    };
    let below = sign_at(-lambda / 2.0)?;
    let above = sign_at(lambda / 2.0)?;
    decode_branch(below, above)
}

/// `below = sign(P + λ/2)`, `above = sign(P − λ/2)`.
pub fn decode_branch(below: i8, above: i8) -> Result<Branch> {
    match (below, above) {
        (1, 1) => Ok(Branch::Positive),
        (-1, -1) => Ok(Branch::Negative),
        (b, a) if b >= 0 && a <= 0 => Ok(Branch::Zero),
        (b, a) => Err(PartyError::Corruption(format!("inconsistent comparison signs ({b}, {a})"))),
    }
}

/// Recovers the plaintext of `c` through the CSP without revealing it: the
/// CSP only ever sees `x + μ` for a fresh mask `μ` of about `|N|/2` bits.
pub fn blind_decrypt<R: Rng + ?Sized>(
    pk: &PublicKey,
    c: &Ciphertext,
    channel: &mut dyn CspChannel,
    rng: &mut R,
) -> Result<FixedDecimal> {
    let mu = rng.gen_bigint((pk.bits() / 2) as u64);
    blind_decrypt_with_mask(pk, c, &mu, channel, rng)
}

pub fn blind_decrypt_with_mask<R: Rng + ?Sized>(
    pk: &PublicKey,
    c: &Ciphertext,
    mu: &BigInt,
    channel: &mut dyn CspChannel,
    rng: &mut R,
) -> Result<FixedDecimal> {
    if c.exponent < 0 {
        return Err(crate::paillier::PaillierError::InvalidExponent(c.exponent).into());
    }
    let mask = FixedDecimal::new(mu.clone(), c.exponent as u32);
    let masked = pk.add(c, &pk.encrypt(&pk.encode_fixed(&mask)?, rng))?;
    let reply = channel.blind_decrypt(&masked)?;
    if reply.exponent() != mask.exponent() {
        return Err(PartyError::Corruption("blind decryption changed the exponent".into()));
    }
    Ok(reply.sub(&mask))
}

/// Result of the Evaluator's training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Final noisy weights `ŵ*`, with zero-branch coordinates resolved to `r_k`.
    pub w_hat: Vec<f64>,
    /// Coordinates that ended in the lasso zero branch.
    pub zero_branch: Vec<bool>,
    pub sweeps: usize,
    pub converged: bool,
}

/// What the Evaluator knows once the decrypted bundle arrives.
#[derive(Debug, Clone)]
pub struct Trainer {
    pk: PublicKey,
    kind: RegressionKind,
    lambda: f64,
    q_prime: Vec<f64>,
    s: Vec<Vec<FixedDecimal>>,
    s_f64: Array2<f64>,
    z: Vec<FixedDecimal>,
    z_f64: Vec<f64>,
    dr_prime: Vec<f64>,
    enc_r: Vec<Ciphertext>,
}

impl Trainer {
    /// `enc_r` is required for lasso and ignored otherwise.
    pub fn new(
        pk: PublicKey,
        plain: &PlainBundle,
        xi: &XiMatrix,
        kind: RegressionKind,
        lambda: f64,
        enc_r: Vec<Ciphertext>,
    ) -> Result<Self> {
        let s = remove_xi(plain, xi)?;
        let d = plain.dim();
        if kind == RegressionKind::Lasso && enc_r.len() != d {
            return Err(PartyError::Shape(format!("lasso needs {d} encrypted noise entries, got {}", enc_r.len())));
        }
        let s_f64 = Array2::from_shape_fn((d, d), |(k, j)| s[k][j].to_f64());
        let to_f64 = |v: &[FixedDecimal]| v.iter().map(FixedDecimal::to_f64).collect::<Vec<_>>();
        Ok(Self {
            pk,
            kind,
            lambda,
            q_prime: to_f64(&plain.q_prime),
            s,
            s_f64,
            z_f64: to_f64(&plain.z),
            z: plain.z.clone(),
            dr_prime: to_f64(&plain.dr_prime),
            enc_r,
        })
    }

    pub fn dim(&self) -> usize {
        self.q_prime.len()
    }

    /// The recovered cross terms `S`.
    pub fn s(&self) -> &Array2<f64> {
        &self.s_f64
    }

    /// `P'_k = Q'_k − Σ_{j≠k} S_kj ŵ_j − ΔR'_k`.
    pub fn compute_p_prime<R: Rng + ?Sized>(&self, k: usize, state: &[NoisyWeight], rng: &mut R) -> Result<PPrime> {
        let mut plain = self.q_prime[k] - self.dr_prime[k];
        let mut hidden = Vec::new();
        for (j, w) in state.iter().enumerate() {
            if j == k {
                continue;
            }
            match w {
                NoisyWeight::Plain(v) => plain -= self.s_f64[[k, j]] * v,
                NoisyWeight::Hidden(c) => hidden.push((j, c)),
            }
        }
        if hidden.is_empty() {
            return Ok(PPrime::Plain(plain));
        }
        let pk = &self.pk;
        let mut acc = pk.encrypt(&pk.encode_at(plain, 2)?, rng);
        for (j, c) in hidden {
            acc = pk.sub(&acc, &pk.scalar_mul(c, &pk.encode_fixed(&self.s[k][j])?)?)?;
        }
        Ok(PPrime::Encrypted(acc))
    }

    /// Coordinate descent from `w_hat0`. `on_sweep(t, state)` runs after
    /// each completed sweep.
    pub fn train<R: Rng + ?Sized>(
        &self,
        spec: &RegressionSpec,
        w_hat0: &[f64],
        channel: &mut dyn CspChannel,
        rng: &mut R,
        mut on_sweep: impl FnMut(usize, &[NoisyWeight]),
    ) -> Result<TrainOutcome> {
        spec.validate()?;
        if spec.kind != self.kind || spec.lambda != self.lambda {
            return Err(PartyError::Config("training spec differs from the session's regression".into()));
        }
        let d = self.dim();
        if w_hat0.len() != d {
            return Err(PartyError::Shape(format!("{} initial weights for {d} coordinates", w_hat0.len())));
        }
        let mut state: Vec<NoisyWeight> = w_hat0.iter().map(|&v| NoisyWeight::Plain(v)).collect();
        let mut sweeps = 0;
        let mut converged = false;
        while sweeps < spec.max_iterations {
            let mut max_change = 0.0f64;
            for k in 0..d {
                let next = self.update(k, &state, channel, rng)?;
                max_change = max_change.max((next.plain_part() - state[k].plain_part()).abs());
                state[k] = next;
            }
            sweeps += 1;
            on_sweep(sweeps, &state);
            if max_change < spec.tolerance {
                converged = true;
                break;
            }
        }
        let zero_branch = state.iter().map(NoisyWeight::is_hidden).collect();
        let w_hat = state
            .iter()
            .map(|w| match w {
                NoisyWeight::Plain(v) => Ok(*v),
                NoisyWeight::Hidden(c) => {
                    let fresh = self.pk.rerandomize(c, rng);
                    Ok(blind_decrypt(&self.pk, &fresh, channel, rng)?.to_f64())
                }
            })
            .collect::<Result<_>>()?;
        Ok(TrainOutcome { w_hat, zero_branch, sweeps, converged })
    }

    fn update<R: Rng + ?Sized>(
        &self,
        k: usize,
        state: &[NoisyWeight],
        channel: &mut dyn CspChannel,
        rng: &mut R,
    ) -> Result<NoisyWeight> {
        let zero_denominator = |e: PartyError| match e {
            PartyError::Regression(RegressionError::ZeroDenominator { .. }) => {
                PartyError::Regression(RegressionError::ZeroDenominator { coordinate: k })
            }
            other => other,
        };
        let p_prime = self.compute_p_prime(k, state, rng)?;
        if self.kind != RegressionKind::Lasso {
            let PPrime::Plain(p) = p_prime else {
                return Err(PartyError::Corruption("hidden weight outside lasso".into()));
            };
            let next = noisy_update(self.kind, p, self.z_f64[k], self.lambda, Branch::Positive).map_err(zero_denominator)?;
            return finite(k, next);
        }

        let e_p_prime = match &p_prime {
            PPrime::Plain(p) => self.pk.encrypt(&self.pk.encode_at(*p, 2)?, rng),
            PPrime::Encrypted(c) => c.clone(),
        };
        let branch = lasso_branch(&self.pk, k, &e_p_prime, &self.enc_r[k], &self.z[k], self.lambda, channel, rng)?;
        if branch == Branch::Zero {
            return Ok(NoisyWeight::Hidden(self.pk.rerandomize(&self.enc_r[k], rng)));
        }
        let p = match p_prime {
            PPrime::Plain(p) => p,
            PPrime::Encrypted(c) => blind_decrypt(&self.pk, &c, channel, rng)?.to_f64(),
        };
        let next = noisy_update(self.kind, p, self.z_f64[k], self.lambda, branch).map_err(zero_denominator)?;
        finite(k, next)
    }
}

fn finite(k: usize, v: f64) -> Result<NoisyWeight> {
    if !v.is_finite() {
        return Err(RegressionError::NonFiniteWeight { coordinate: k }.into());
    }
    Ok(NoisyWeight::Plain(v))
}
