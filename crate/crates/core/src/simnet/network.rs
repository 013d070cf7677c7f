//! Links, latency and fault injection on Byzantine-controlled edges.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::protocol::{MessageKind, PeerId};
use crate::vecmath::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub latency: u64,
    /// Uniform extra delay in `[0, jitter]`.
    pub jitter: u64,
    /// Length of one protocol phase; a message still in flight when its
    /// phase ends counts as not sent.
    pub phase_len: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { latency: 10, jitter: 40, phase_len: 1_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    Drop,
    Duplicate,
    /// Delays delivery to a random point late in the phase.
    Reorder,
}

/// A fault on messages sent by a Byzantine peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRule {
    pub kind: FaultKind,
    pub from: PeerId,
    /// Recipient filter for point-to-point messages.
    #[serde(default)]
    pub to: Option<PeerId>,
    #[serde(default)]
    pub message: Option<MessageKind>,
    /// `[first, last]` step range, inclusive.
    #[serde(default)]
    pub steps: Option<[u64; 2]>,
    /// Duplicates carry a different payload, signed by the sender.
    #[serde(default)]
    pub mutate: bool,
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

impl FaultRule {
    pub fn new(kind: FaultKind, from: PeerId) -> Self {
        Self { kind, from, to: None, message: None, steps: None, mutate: false, probability: 1.0 }
    }

    pub fn matches(&self, step: u64, from: PeerId, to: Option<PeerId>, kind: MessageKind) -> bool {
        self.from == from
            && self.message.is_none_or(|k| k == kind)
            && (self.to.is_none() || to.is_none() || self.to == to)
            && self.steps.is_none_or(|[a, b]| (a..=b).contains(&step))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FaultError {
    #[error("fault on {0}'s outgoing links, but {0} is honest and honest links are reliable")]
    HonestLink(PeerId),
    #[error("fault probability must lie in [0, 1]")]
    Probability,
}

/// Checks that every rule scopes a Byzantine sender.
pub fn validate_faults(rules: &[FaultRule], byzantine: &BTreeSet<PeerId>) -> Result<(), FaultError> {
    for r in rules {
        if !byzantine.contains(&r.from) {
            return Err(FaultError::HonestLink(r.from));
        }
        if !(0.0..=1.0).contains(&r.probability) {
            return Err(FaultError::Probability);
        }
    }
    Ok(())
}

/// What happens to one send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    /// Delivery delays after the send; empty if dropped.
    pub delays: [Option<u64>; 2],
    pub mutate_copy: bool,
}

/// Latency draws and fault decisions from the network seed.
pub struct Network {
    pub cfg: NetConfig,
    rules: Vec<FaultRule>,
    stream: SeededStream,
}

impl Network {
    pub fn new(cfg: NetConfig, rules: Vec<FaultRule>, seed: u64) -> Self {
        Self { cfg, rules, stream: SeededStream::new(seed) }
    }

    fn delay(&mut self) -> u64 {
        self.cfg.latency + self.stream.next_below(self.cfg.jitter + 1)
    }

    /// Decides delivery of one message sent `remaining` time units before
    /// its phase ends.
    pub fn schedule(&mut self, step: u64, from: PeerId, to: Option<PeerId>, kind: MessageKind, remaining: u64) -> Schedule {
        let base = self.delay();
        let mut out = Schedule { delays: [Some(base), None], mutate_copy: false };
        for i in 0..self.rules.len() {
            if !self.rules[i].matches(step, from, to, kind) {
                continue;
            }
            let (rule_kind, p, mutate) = (self.rules[i].kind, self.rules[i].probability, self.rules[i].mutate);
            if p < 1.0 && self.stream.next_open01() >= p {
                continue;
            }
            match rule_kind {
                FaultKind::Drop => out.delays = [None, None],
                FaultKind::Duplicate => {
                    if out.delays[0].is_some() {
                        out.delays[1] = Some(self.delay());
                        out.mutate_copy |= mutate;
                    }
                }
                FaultKind::Reorder => {
                    if let Some(d) = out.delays[0].as_mut() {
                        let late = remaining.saturating_sub(1).max(*d);
                        *d += self.stream.next_below(late - *d + 1);
                    }
                }
            }
        }
        out
    }
}
