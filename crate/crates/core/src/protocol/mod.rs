//! The per-step BTARD round: messages, verifications, accusations, the ban
//! ledger and validator election.

use core::fmt;

use serde::{Deserialize, Serialize};

/// Index of a peer in the swarm, stable for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u32);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

mod checks;
mod election;
mod judge;
mod ledger;
mod message;
mod record;

pub use checks::{checksum_sum_ok, eps_chk, part_metadata, verification3_fires, PartMetadata};
pub use election::{elect_validators, Election};
pub use judge::{
    aggregator_accusations, checksum_accusations, conclude_step, judge, replay_gradient, GradientFindings,
    GradientOracle, StepConclusion,
};
pub use ledger::{
    process_accusations, processing_key, sorted_accusations, BanCause, BanEntry, BanLedger, Verdict,
};
pub use message::{AccuseReason, DecodeError, EliminateReason, Message, MessageKind, Payload, SignedMessage};
pub use record::{AggregationCheck, Reports, StepMeta, StepRecord};
