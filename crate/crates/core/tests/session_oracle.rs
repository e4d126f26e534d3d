//! Denoised session weights against pooled-data coordinate descent.

use std::time::Duration;

use fcd_core::data::{gen_synthetic, partition_equal};
use fcd_core::regression::fit_cd;
use fcd_core::{run_session, Dataset, RegressionKind, SessionConfig};
use ndarray::array;
use proptest::prelude::*;

fn config(kind: RegressionKind, lambda: f64, iterations: usize, seed: u64) -> SessionConfig {
    SessionConfig { key_bits: 256, seed, timeout: Duration::from_secs(120), ..SessionConfig::new(kind, lambda, iterations) }
}

fn check(all: &Dataset, shards: &[Dataset], cfg: &SessionConfig) -> Result<(), TestCaseError> {
    let out = run_session(cfg, shards).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let reference = fit_cd(all, &cfg.spec(), &out.initial_weights).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for w in &out.owner_weights {
        let err = w.max_abs_diff(&reference);
        prop_assert!(err <= 1e-4, "{:?}: error {err} ({:?} vs {:?})", cfg.kind, w, reference);
    }
    Ok(())
}

#[test]
fn toy_two_owner_linear_session() {
    let a = Dataset::new(array![[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]], array![2.1, 3.9, 6.2]).unwrap();
    let b = Dataset::new(array![[1.0, 4.0], [1.0, 5.0]], array![8.1, 9.8]).unwrap();
    let all = Dataset::concat(&[&a, &b]).unwrap();
    check(&all, &[a, b], &config(RegressionKind::Linear, 0.0, 200, 3)).unwrap();
}

#[test]
fn zero_iterations_return_the_initial_weights() {
    let all = gen_synthetic(40, 3, 5).unwrap();
    let shards = partition_equal(&all, 2, 5).unwrap();
    for kind in RegressionKind::ALL {
        let out = run_session(&config(kind, 1.0, 0, 9), &shards).unwrap();
        assert_eq!(out.sweeps, 0);
        let err = out.weights().max_abs_diff(&out.initial_weights);
        assert!(err < 1e-9, "{kind}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn sessions_match_pooled_coordinate_descent(
        m in 20usize..120,
        n in 1usize..6,
        owners in prop::sample::select(vec![2usize, 3, 5]),
        kind in prop::sample::select(RegressionKind::ALL.to_vec()),
        lambda in 0.0f64..20.0,
        iterations in 1usize..30,
        seed in any::<u64>(),
    ) {
        let all = gen_synthetic(m, n, seed).unwrap();
        let shards = partition_equal(&all, owners, seed ^ 1).unwrap();
        check(&all, &shards, &config(kind, lambda, iterations, seed))?;
    }
}
