//! Per-party communication and homomorphic-operation costs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::message::PartyId;
use super::transcript::Transcript;
use crate::paillier::OpCounts;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyCost {
    pub ops: OpCounts,
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub ciphertexts_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub key_bits: usize,
    /// Fixed-width size of one ciphertext, `2|N|` bits.
    pub ciphertext_bytes: usize,
    pub parties: BTreeMap<PartyId, PartyCost>,
}

impl CostReport {
    pub fn party(&self, id: PartyId) -> PartyCost {
        self.parties.get(&id).copied().unwrap_or_default()
    }

    /// Sum over all data owners.
    pub fn data_owners(&self) -> PartyCost {
        self.parties
            .iter()
            .filter(|(id, _)| matches!(id, PartyId::DataOwner(_)))
            .fold(PartyCost::default(), |acc, (_, c)| add(acc, *c))
    }

    /// Size of the ciphertexts `id` sent, at their fixed width.
    pub fn ciphertext_payload_bytes(&self, id: PartyId) -> u64 {
        self.party(id).ciphertexts_sent * self.ciphertext_bytes as u64
    }

    pub fn total(&self) -> PartyCost {
        self.parties.values().fold(PartyCost::default(), |acc, c| add(acc, *c))
    }
}

fn add(a: PartyCost, b: PartyCost) -> PartyCost {
    PartyCost {
        ops: OpCounts {
            encryptions: a.ops.encryptions + b.ops.encryptions,
            decryptions: a.ops.decryptions + b.ops.decryptions,
            additions: a.ops.additions + b.ops.additions,
            scalar_muls: a.ops.scalar_muls + b.ops.scalar_muls,
            rerandomizations: a.ops.rerandomizations + b.ops.rerandomizations,
        },
        messages_sent: a.messages_sent + b.messages_sent,
        bytes_sent: a.bytes_sent + b.bytes_sent,
        ciphertexts_sent: a.ciphertexts_sent + b.ciphertexts_sent,
    }
}

/// Combines each party's operation counts with its traffic in `transcript`.
pub fn counters_report(key_bits: usize, ciphertext_bytes: usize, ops: &BTreeMap<PartyId, OpCounts>, transcript: &Transcript) -> CostReport {
    let mut parties: BTreeMap<PartyId, PartyCost> =
        ops.iter().map(|(id, ops)| (*id, PartyCost { ops: *ops, ..PartyCost::default() })).collect();
    for e in &transcript.entries {
        let cost = parties.entry(e.from).or_default();
        cost.messages_sent += 1;
        cost.bytes_sent += e.bytes as u64;
        cost.ciphertexts_sent += e.ciphertexts as u64;
    }
    CostReport { key_bits, ciphertext_bytes, parties }
}
