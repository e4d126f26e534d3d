//! Versioned, self-describing messages. One envelope per JSON line:
//!
//! ```text
//! {"version":1,"session_id":"…","sender":"csp","receiver":"do-1","type":"NoiseVector","payload":{…}}
//! ```
//!
//! Big integers travel as decimal strings and reals as JSON numbers or exact
//! decimal strings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ProtocolError, Result};
use crate::paillier::{Ciphertext, FixedDecimal, PublicKey};
use crate::party::{AggregateBundle, LocalContribution, NoiseVector, PlainBundle};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartyId {
    Csp,
    Evaluator,
    /// Data owners are numbered from 1.
    DataOwner(usize),
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Csp => f.write_str("csp"),
            PartyId::Evaluator => f.write_str("evaluator"),
            PartyId::DataOwner(l) => write!(f, "do-{l}"),
        }
    }
}

impl FromStr for PartyId {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csp" => Ok(PartyId::Csp),
            "evaluator" => Ok(PartyId::Evaluator),
            _ => s
                .strip_prefix("do-")
                .and_then(|l| l.parse().ok())
                .filter(|l| *l >= 1)
                .map(PartyId::DataOwner)
                .ok_or_else(|| ProtocolError::Malformed(format!("unknown party {s:?}"))),
        }
    }
}

impl Serialize for PartyId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Session phases, in the order they run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    KeyGeneration = 1,
    LocalComputation = 2,
    Aggregation = 3,
    Training = 4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum Message {
    /// `enc_r` is sent to the Evaluator only, and only for lasso.
    KeyDistribution { public_key: PublicKey, enc_r: Option<Vec<Ciphertext>> },
    NoiseVector(NoiseVector),
    EncryptedContribution(LocalContribution),
    AggregatedBundle(AggregateBundle),
    DecryptedBundle(PlainBundle),
    ComparisonRequest { coordinate: usize, ciphertext: Ciphertext },
    ComparisonResponse { sign: i8 },
    BlindDecryptRequest { ciphertext: Ciphertext },
    BlindDecryptResponse { value: FixedDecimal },
    FinalWeights { w_hat: Vec<f64> },
}

impl Message {
    pub const VARIANTS: [&'static str; 10] = [
        "KeyDistribution",
        "NoiseVector",
        "EncryptedContribution",
        "AggregatedBundle",
        "DecryptedBundle",
        "ComparisonRequest",
        "ComparisonResponse",
        "BlindDecryptRequest",
        "BlindDecryptResponse",
        "FinalWeights",
    ];

    pub fn variant(&self) -> &'static str {
        match self {
            Message::KeyDistribution { .. } => "KeyDistribution",
            Message::NoiseVector(_) => "NoiseVector",
            Message::EncryptedContribution(_) => "EncryptedContribution",
            Message::AggregatedBundle(_) => "AggregatedBundle",
            Message::DecryptedBundle(_) => "DecryptedBundle",
            Message::ComparisonRequest { .. } => "ComparisonRequest",
            Message::ComparisonResponse { .. } => "ComparisonResponse",
            Message::BlindDecryptRequest { .. } => "BlindDecryptRequest",
            Message::BlindDecryptResponse { .. } => "BlindDecryptResponse",
            Message::FinalWeights { .. } => "FinalWeights",
        }
    }

    pub fn phase(&self) -> Phase {
        phase_of(self.variant())
    }

    /// Number of Paillier ciphertexts carried.
    pub fn ciphertext_count(&self) -> usize {
        match self {
            Message::KeyDistribution { enc_r, .. } => enc_r.as_ref().map_or(0, Vec::len),
            Message::EncryptedContribution(c) => c.ciphertext_count(),
            Message::AggregatedBundle(b) => b.ciphertext_count(),
            Message::ComparisonRequest { .. } | Message::BlindDecryptRequest { .. } => 1,
            _ => 0,
        }
    }
}

pub fn phase_of(variant: &str) -> Phase {
    match variant {
        "KeyDistribution" | "NoiseVector" => Phase::KeyGeneration,
        "EncryptedContribution" => Phase::LocalComputation,
        "AggregatedBundle" | "DecryptedBundle" => Phase::Aggregation,
        _ => Phase::Training,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub version: u32,
    pub session_id: String,
    pub sender: PartyId,
    pub receiver: PartyId,
    #[serde(flatten)]
    pub message: Message,
}

impl Envelope {
    pub fn new(session_id: &str, sender: PartyId, receiver: PartyId, message: Message) -> Self {
        Self { version: PROTOCOL_VERSION, session_id: session_id.to_string(), sender, receiver, message }
    }

    /// One JSON line, without the trailing newline.
    pub fn to_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    /// Parses a line, checking the version before the payload.
    pub fn from_line(line: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(format!("not JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| ProtocolError::Malformed("envelope is not an object".into()))?;
        let version = obj
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ProtocolError::Malformed("missing version".into()))?;
        if version != u64::from(PROTOCOL_VERSION) {
            return Err(ProtocolError::Version { found: version, expected: PROTOCOL_VERSION });
        }
        let variant = obj.get("type").and_then(serde_json::Value::as_str).unwrap_or("").to_string();
        if !Message::VARIANTS.contains(&variant.as_str()) {
            return Err(ProtocolError::Malformed(format!("unknown message type {variant:?}")));
        }
        let empty = match obj.get("payload") {
            None | Some(serde_json::Value::Null) => true,
            Some(serde_json::Value::Object(m)) => m.is_empty(),
            Some(serde_json::Value::Array(a)) => a.is_empty(),
            Some(serde_json::Value::String(s)) => s.is_empty(),
            _ => false,
        };
        if empty {
            return Err(ProtocolError::EmptyPayload { variant });
        }
        serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(format!("{variant}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::keygen;
    use crate::party::data_owner::LocalShard;
    use crate::party::evaluator::aggregate;
    use crate::regression::Dataset;
    use ndarray::array;
    use num_bigint::BigInt;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn every_variant(seed: u64) -> Vec<Message> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (pk, _) = keygen(128, &mut rng).unwrap();
        let fixed = |rng: &mut ChaCha20Rng| FixedDecimal::new(BigInt::from(rng.gen_range(-10_000_000i64..10_000_000)), 1);
        let noise = NoiseVector { r: (0..2).map(|_| fixed(&mut rng)).collect(), seed_w0: rng.gen() };
        let shard = LocalShard::new(1, Dataset::new(array![[1.0, 2.0], [1.0, 0.0]], array![3.0, 1.0]).unwrap()).unwrap();
        let contrib = shard.build_contribution(&noise, &pk, &mut rng).unwrap();
        let bundle = aggregate(&pk, &[contrib.clone(), contrib.clone()]).unwrap();
        let c = contrib.enc_q[0].clone();
        let plain = PlainBundle {
            q_prime: vec![fixed(&mut rng), fixed(&mut rng)],
            s_prime: vec![vec![fixed(&mut rng), fixed(&mut rng)], vec![fixed(&mut rng), fixed(&mut rng)]],
            z: vec![fixed(&mut rng), fixed(&mut rng)],
            dr_prime: vec![fixed(&mut rng), fixed(&mut rng)],
        };
        vec![
            Message::KeyDistribution { public_key: pk.clone(), enc_r: Some(vec![c.clone()]) },
            Message::KeyDistribution { public_key: pk, enc_r: None },
            Message::NoiseVector(noise),
            Message::EncryptedContribution(contrib),
            Message::AggregatedBundle(bundle),
            Message::DecryptedBundle(plain),
            Message::ComparisonRequest { coordinate: rng.gen_range(0..10), ciphertext: c.clone() },
            Message::ComparisonResponse { sign: -1 },
            Message::BlindDecryptRequest { ciphertext: c },
            Message::BlindDecryptResponse { value: fixed(&mut rng) },
            Message::FinalWeights { w_hat: (0..3).map(|_| rng.gen_range(-1e3..1e3)).collect() },
        ]
    }

    #[test]
    fn every_variant_round_trips() {
        for seed in 0..5 {
            for msg in every_variant(seed) {
                let env = Envelope::new("s1", PartyId::Csp, PartyId::DataOwner(3), msg);
                let line = env.to_line().unwrap();
                assert!(!line.contains('\n'));
                assert_eq!(Envelope::from_line(&line).unwrap(), env);
            }
        }
    }

    #[test]
    fn envelope_layout() {
        let env = Envelope::new("abc", PartyId::Evaluator, PartyId::Csp, Message::ComparisonResponse { sign: 1 });
        let v: serde_json::Value = serde_json::from_str(&env.to_line().unwrap()).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["sender"], "evaluator");
        assert_eq!(v["receiver"], "csp");
        assert_eq!(v["type"], "ComparisonResponse");
        assert_eq!(v["payload"]["sign"], 1);
    }

    #[test]
    fn version_mismatch_is_typed() {
        let line = r#"{"version":2,"session_id":"s","sender":"csp","receiver":"evaluator","type":"ComparisonResponse","payload":{"sign":1}}"#;
        assert!(matches!(Envelope::from_line(line), Err(ProtocolError::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn empty_and_unknown_payloads_are_rejected() {
        let base = r#"{"version":1,"session_id":"s","sender":"csp","receiver":"evaluator","type":"#;
        for tail in [r#""FinalWeights","payload":{}}"#, r#""FinalWeights"}"#, r#""FinalWeights","payload":null}"#] {
            let line = format!("{base}{tail}");
            assert!(matches!(Envelope::from_line(&line), Err(ProtocolError::EmptyPayload { .. })), "{line}");
        }
        let unknown = format!(r#"{base}"Gossip","payload":{{"x":1}}}}"#);
        assert!(matches!(Envelope::from_line(&unknown), Err(ProtocolError::Malformed(_))));
        let bad_party = r#"{"version":1,"session_id":"s","sender":"do-0","receiver":"csp","type":"ComparisonResponse","payload":{"sign":1}}"#;
        assert!(matches!(Envelope::from_line(bad_party), Err(ProtocolError::Malformed(_))));
        assert!(Envelope::from_line("not json").is_err());
    }

    #[test]
    fn party_ids_round_trip() {
        for p in [PartyId::Csp, PartyId::Evaluator, PartyId::DataOwner(1), PartyId::DataOwner(12)] {
            assert_eq!(p.to_string().parse::<PartyId>().unwrap(), p);
        }
    }

    #[test]
    fn phases_and_counts() {
        let msgs = every_variant(9);
        let phases: Vec<Phase> = msgs.iter().map(Message::phase).collect();
        assert!(phases.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(msgs[3].ciphertext_count(), 4 + 3 * 2);
        assert_eq!(msgs[4].ciphertext_count(), 4 + 3 * 2);
        assert_eq!(msgs[0].ciphertext_count(), 1);
        assert_eq!(msgs[1].ciphertext_count(), 0);
    }
}
