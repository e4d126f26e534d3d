//! Privacy-preserving multiparty linear, ridge and lasso regression by
//! federated coordinate descent over Paillier encryption.

pub mod data;
pub mod paillier;
pub mod party;
pub mod protocol;
pub mod regression;

pub use data::{DataError, Preset, RawTable};
pub use paillier::{Ciphertext, FixedDecimal, OpCounts, PaillierError, PrivateKey, PublicKey};
pub use party::{CspView, NoiseVector, PartyError, XiMatrix, XiRanges};
pub use protocol::{run_session, CostReport, PartyId, ProtocolError, SessionConfig, SessionOutcome, Transport, XiChoice};
pub use regression::{Dataset, FitReport, ModelWeights, RegressionError, RegressionKind, RegressionSpec};
