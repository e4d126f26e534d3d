//! Shared fixtures for the criterion benchmarks.

use fcd_core::data::{gen_synthetic, partition_equal};
use fcd_core::paillier::keygen;
use fcd_core::{Dataset, PrivateKey, PublicKey};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn keys(bits: usize) -> (PublicKey, PrivateKey) {
    keygen(bits, &mut rng(bits as u64)).expect("benchmark key sizes are valid")
}

/// Synthetic data with `n` features split across `owners`.
pub fn shards(m: usize, n: usize, owners: usize) -> Vec<Dataset> {
    let all = gen_synthetic(m, n, 7).expect("positive shape");
    partition_equal(&all, owners, 7).expect("enough rows per owner")
}
