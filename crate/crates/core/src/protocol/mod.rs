//! Wire format, transports, transcripts and the four-phase session runner.

pub mod counters;
pub mod message;
pub mod session;
pub mod transcript;
pub mod transport;

use std::time::Duration;

use thiserror::Error;

use crate::party::PartyError;

pub use counters::{counters_report, CostReport, PartyCost};
pub use message::{Envelope, Message, PartyId, Phase, PROTOCOL_VERSION};
pub use session::{run_session, SessionConfig, SessionOutcome, Transport, XiChoice};
pub use transcript::{Transcript, TranscriptEntry};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("unsupported protocol version {found} (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("message {variant} has an empty payload")]
    EmptyPayload { variant: String },
    #[error("{party} expected {expected} but received {found}")]
    PhaseOrder { party: PartyId, expected: &'static str, found: String },
    #[error("message for {receiver} from {sender} arrived at {party}")]
    Misrouted { party: PartyId, sender: PartyId, receiver: PartyId },
    #[error("message belongs to session {found}, not {expected}")]
    SessionMismatch { expected: String, found: String },
    #[error("{party} timed out after {after:?} waiting for {peer}")]
    Timeout { party: PartyId, peer: PartyId, after: Duration },
    #[error("{peer} closed the link to {party}")]
    PeerClosed { party: PartyId, peer: PartyId },
    #[error("transport i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{party}: {source}")]
    Party { party: PartyId, source: PartyError },
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("party thread {0} panicked")]
    Panicked(PartyId),
}

impl ProtocolError {
    /// Errors that only report another party's failure.
    pub fn is_secondary(&self) -> bool {
        matches!(self, ProtocolError::PeerClosed { .. })
    }
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;
