//! Per-thread tallies of Paillier operations.
//!
//! Each protocol party runs on its own thread, so a thread-local tally
//! attributes every operation to the party that performed it.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub encryptions: u64,
    pub decryptions: u64,
    pub additions: u64,
    pub scalar_muls: u64,
    pub rerandomizations: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.encryptions + self.decryptions + self.additions + self.scalar_muls + self.rerandomizations
    }

    pub fn saturating_sub(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            encryptions: self.encryptions.saturating_sub(earlier.encryptions),
            decryptions: self.decryptions.saturating_sub(earlier.decryptions),
            additions: self.additions.saturating_sub(earlier.additions),
            scalar_muls: self.scalar_muls.saturating_sub(earlier.scalar_muls),
            rerandomizations: self.rerandomizations.saturating_sub(earlier.rerandomizations),
        }
    }
}

thread_local! {
    static COUNTS: Cell<OpCounts> = const { Cell::new(OpCounts {
        encryptions: 0,
        decryptions: 0,
        additions: 0,
        scalar_muls: 0,
        rerandomizations: 0,
    }) };
}

/// Operations performed on the current thread so far.
pub fn snapshot() -> OpCounts {
    COUNTS.with(Cell::get)
}

pub fn reset() {
    COUNTS.with(|c| c.set(OpCounts::default()));
}

pub(crate) fn record(f: impl FnOnce(&mut OpCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}
