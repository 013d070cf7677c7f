//! Run trace: one event per line in the text format.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, HashMode, PublicKey};
use crate::protocol::{BanCause, PeerId, StepMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceLevel {
    Off,
    /// Barriers, accusations, triggers, bans and step digests.
    #[default]
    Summary,
    /// Everything needed to audit the run: step inputs and the wire bytes
    /// of every delivered message.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierKind {
    PreAggregation,
    Verification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TraceKind {
    Roster {
        mode: HashMode,
        /// Validators elected per step.
        validators: usize,
        keys: Vec<PublicKey>,
    },
    StepStart {
        step: u64,
        x_digest: Digest,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        meta: Option<StepMeta>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        x: Option<Vec<f64>>,
    },
    /// A message reached `actor` (`to` is `None` for the broadcast channel).
    Deliver {
        actor: PeerId,
        digest: Digest,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        to: Option<PeerId>,
        /// Hex wire form, on first delivery of a digest in full traces.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        wire: Option<String>,
    },
    /// A message that never arrived before its phase ended.
    Lost {
        actor: PeerId,
        digest: Digest,
    },
    Barrier {
        step: u64,
        barrier: BarrierKind,
    },
    /// An honest peer gave up waiting on `actor` for a required message.
    Timeout {
        actor: PeerId,
        observer: PeerId,
        kind: String,
    },
    Accusation {
        actor: PeerId,
        digest: Digest,
    },
    Trigger {
        step: u64,
        partition: u32,
    },
    Ban {
        actor: PeerId,
        step: u64,
        cause: BanCause,
    },
    StepEnd {
        step: u64,
        aggregate: Digest,
        ledger: Digest,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}
