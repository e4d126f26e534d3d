//! Message-count, cost and transport invariants of complete sessions.

use std::time::Duration;

use fcd_core::data::{gen_synthetic, partition_equal};
use fcd_core::protocol::{PartyId, Transcript};
use fcd_core::{run_session, RegressionKind, SessionConfig, SessionOutcome, Transport};

const KEY_BITS: usize = 256;

fn session(kind: RegressionKind, m: usize, n: usize, owners: usize, iterations: usize, seed: u64) -> SessionOutcome {
    let all = gen_synthetic(m, n, seed).unwrap();
    let shards = partition_equal(&all, owners, seed).unwrap();
    let cfg = SessionConfig {
        key_bits: KEY_BITS,
        seed,
        tolerance: 0.0,
        timeout: Duration::from_secs(120),
        ..SessionConfig::new(kind, 5.0, iterations)
    };
    run_session(&cfg, &shards).unwrap()
}

/// `(n+1)^2 + 3(n+1)`: the `Q`, `S`, `Z` and `ΔR` blocks.
fn bundle_size(n: usize) -> u64 {
    let d = (n + 1) as u64;
    d * d + 3 * d
}

#[test]
fn one_encryption_pass_and_one_decrypted_bundle() {
    for kind in [RegressionKind::Linear, RegressionKind::Ridge] {
        for iterations in [1, 5, 25] {
            let out = session(kind, 50, 3, 3, iterations, 11);
            let t = &out.transcript;
            assert_eq!(t.count("DecryptedBundle"), 1);
            assert_eq!(t.count("AggregatedBundle"), 1);
            assert_eq!(t.count("EncryptedContribution"), 3);
            assert_eq!(t.count("ComparisonRequest"), 0);
            assert_eq!(t.count("BlindDecryptRequest"), 0);
            for l in 1..=3 {
                let c = out.costs.party(PartyId::DataOwner(l));
                assert_eq!(c.ops.encryptions, bundle_size(3), "{kind} t={iterations} do-{l}");
                assert_eq!(c.ciphertexts_sent, bundle_size(3));
                assert_eq!(c.messages_sent, 1);
            }
        }
    }
}

#[test]
fn evaluator_and_csp_ciphertexts_are_enumerable() {
    for n in [2, 4, 8, 16] {
        for m in [100, 1000] {
            let out = session(RegressionKind::Ridge, m, n, 2, 3, 5);
            let ev = out.costs.party(PartyId::Evaluator);
            let csp = out.costs.party(PartyId::Csp);
            assert_eq!(ev.ciphertexts_sent, bundle_size(n), "n={n} m={m}");
            assert_eq!(csp.ciphertexts_sent, 0);
            assert_eq!(csp.ops.decryptions, bundle_size(n));
            // Homomorphic work scales with the bundle, not with m.
            assert_eq!(ev.ops.additions, bundle_size(n));
            assert_eq!(ev.ops.scalar_muls, ((n + 1) * (n + 1)) as u64);
        }
    }
}

#[test]
fn lasso_asks_two_comparisons_per_coordinate_per_sweep() {
    for n in [2, 4] {
        let out = session(RegressionKind::Lasso, 60, n, 2, 4, 21);
        assert_eq!(out.sweeps, 4);
        let expected = 2 * (n + 1) * out.sweeps;
        assert_eq!(out.transcript.count("ComparisonRequest"), expected);
        assert_eq!(out.transcript.count("ComparisonResponse"), expected);
        assert_eq!(out.costs.party(PartyId::Csp).ops.decryptions as usize, bundle_size(n) as usize + expected
            + out.transcript.count("BlindDecryptRequest"));
    }
}

#[test]
fn ciphertexts_occupy_two_key_lengths() {
    let out = session(RegressionKind::Linear, 30, 2, 2, 2, 1);
    assert_eq!(out.costs.ciphertext_bytes, 2 * KEY_BITS / 8);
    assert_eq!(out.costs.ciphertext_payload_bytes(PartyId::Evaluator), bundle_size(2) * (2 * KEY_BITS as u64 / 8));
    for env in out.transcript.envelopes().unwrap() {
        if let fcd_core::protocol::Message::AggregatedBundle(b) = env.message {
            for c in b.e_q.iter().chain(&b.e_z) {
                assert_eq!(c.to_fixed_bytes(&out.public_key).len(), 2 * KEY_BITS / 8);
            }
        }
    }
}

#[test]
fn transcripts_are_transport_independent() {
    let all = gen_synthetic(50, 3, 2).unwrap();
    let shards = partition_equal(&all, 3, 2).unwrap();
    for kind in RegressionKind::ALL {
        let mut cfg = SessionConfig { key_bits: KEY_BITS, seed: 4, ..SessionConfig::new(kind, 8.0, 5) };
        let local = run_session(&cfg, &shards).unwrap();
        cfg.transport = Transport::Tcp;
        let tcp = run_session(&cfg, &shards).unwrap();
        assert_eq!(local.transcript.canonical(), tcp.transcript.canonical(), "{kind}");
        assert!(local.transcript.phases_monotone() && tcp.transcript.phases_monotone());
        assert_eq!(local.owner_weights, tcp.owner_weights);
    }
}

#[test]
fn transcripts_persist_as_json_lines() {
    let out = session(RegressionKind::Lasso, 40, 2, 2, 3, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.jsonl");
    out.transcript.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), out.transcript.entries.len());
    let back = Transcript::read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(back, out.transcript);
    assert_eq!(back.total_bytes(), out.costs.total().bytes_sent as usize);
}

#[test]
fn reruns_are_deterministic() {
    let a = session(RegressionKind::Lasso, 40, 3, 2, 3, 13);
    let b = session(RegressionKind::Lasso, 40, 3, 2, 3, 13);
    assert_eq!(a.transcript.canonical(), b.transcript.canonical());
    assert_eq!(a.owner_weights, b.owner_weights);
}
