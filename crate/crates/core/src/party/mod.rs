//! The three protocol roles. Each role is a set of pure functions over its
//! own state; the `protocol` module wires them together over links.

pub mod csp;
pub mod data_owner;
pub mod evaluator;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paillier::{FixedDecimal, PaillierError};
use crate::regression::RegressionError;

pub use csp::{CspConfig, CspState, CspView};
pub use data_owner::{LocalContribution, LocalShard, NoiseVector};
pub use evaluator::{AggregateBundle, CspChannel, NoisyWeight, TrainOutcome, XiMatrix, XiRanges};

#[derive(Debug, Error)]
pub enum PartyError {
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("aggregation needs at least 2 contributions, got {0}")]
    TooFewContributions(usize),
    #[error("data owners disagree on the initial noisy weights")]
    InconsistentInitialWeights,
    #[error("invalid perturbation matrix entry ({row}, {col}) = {value}")]
    InvalidXi { row: usize, col: usize, value: String },
    #[error("perturbation removal is not exact at ({row}, {col})")]
    InexactXiRemoval { row: usize, col: usize },
    #[error("protocol corruption: {0}")]
    Corruption(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("channel failure: {0}")]
    Channel(String),
}

pub type Result<T, E = PartyError> = std::result::Result<T, E>;

/// The CSP's decrypted and perturbed answer to an aggregated bundle.
///
/// `q_prime`, `z` are at exponent 1, `s_prime` and `dr_prime` at exponent 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainBundle {
    pub q_prime: Vec<FixedDecimal>,
    pub s_prime: Vec<Vec<FixedDecimal>>,
    pub z: Vec<FixedDecimal>,
    pub dr_prime: Vec<FixedDecimal>,
}

impl PlainBundle {
    pub fn dim(&self) -> usize {
        self.q_prime.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0
            || self.z.len() != d
            || self.dr_prime.len() != d
            || self.s_prime.len() != d
            || self.s_prime.iter().any(|row| row.len() != d)
        {
            return Err(PartyError::Shape("decrypted bundle is not square".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_square<T>(rows: &[Vec<T>], dim: usize, what: &str) -> Result<()> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(PartyError::Shape(format!("{what} must be {dim}x{dim}")));
    }
    Ok(())
}
