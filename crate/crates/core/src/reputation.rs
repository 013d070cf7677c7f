//! Public gradient-hash records, trust status and the admission queue for
//! peers joining mid-run.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, Signature};
use crate::math;
use crate::protocol::PeerId;
use crate::vecmath::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approval {
    Pending,
    ApprovedBy(PeerId),
    /// A validator's own slot, filled with the hash it recomputed.
    Recalculated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub step: u64,
    pub digest: Digest,
    pub signature: Signature,
    pub approval: Approval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrustStatus {
    Untrusted,
    Trusted,
    Banned,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReputationError {
    #[error("entry for step {got} breaks the chain (expected {expected})")]
    Gap { expected: u64, got: u64 },
    #[error("invalid signature on the entry for step {0}")]
    BadSignature(u64),
    #[error("{0} was not elected to validate this entry")]
    NotElected(PeerId),
    #[error("no entry for step {0}")]
    NoEntry(u64),
    #[error("record is banned")]
    Banned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationRecord {
    pub peer: PeerId,
    pub entries: Vec<RecordEntry>,
    pub approved: u32,
    pub threshold: u32,
    pub status: TrustStatus,
}

impl ReputationRecord {
    pub fn new(peer: PeerId, threshold: u32) -> Self {
        Self { peer, entries: Vec::new(), approved: 0, threshold, status: TrustStatus::Untrusted }
    }

    /// A founding member, trusted from the start.
    pub fn genesis(peer: PeerId) -> Self {
        Self { status: TrustStatus::Trusted, ..Self::new(peer, 0) }
    }

    pub fn is_trusted(&self) -> bool {
        self.status == TrustStatus::Trusted
    }

    pub fn last_step(&self) -> Option<u64> {
        self.entries.last().map(|e| e.step)
    }

    fn append(&mut self, step: u64, digest: Digest, signature: Signature, sig_ok: bool, approval: Approval) -> Result<(), ReputationError> {
        if self.status == TrustStatus::Banned {
            return Err(ReputationError::Banned);
        }
        if let Some(last) = self.last_step() {
            if step != last + 1 {
                self.status = TrustStatus::Banned;
                return Err(ReputationError::Gap { expected: last + 1, got: step });
            }
        }
        if !sig_ok {
            self.status = TrustStatus::Banned;
            return Err(ReputationError::BadSignature(step));
        }
        self.entries.push(RecordEntry { step, digest, signature, approval });
        Ok(())
    }

    /// Appends the hash of this step's gradient. `sig_ok` is the caller's
    /// signature check on the entry.
    pub fn record_gradient_hash(&mut self, step: u64, digest: Digest, signature: Signature, sig_ok: bool) -> Result<(), ReputationError> {
        self.append(step, digest, signature, sig_ok, Approval::Pending)
    }

    /// Fills a validator's skipped step with the hash it recomputed.
    pub fn record_recalculated(&mut self, step: u64, digest: Digest, signature: Signature, sig_ok: bool) -> Result<(), ReputationError> {
        self.append(step, digest, signature, sig_ok, Approval::Recalculated)
    }

    /// Applies a validator's verdict on the entry for `step`. Verdicts from
    /// validators the beacon did not elect are rejected and leave the record
    /// untouched.
    pub fn process_validation(&mut self, step: u64, validator: PeerId, elected: bool, approve: bool) -> Result<(), ReputationError> {
        if !elected {
            return Err(ReputationError::NotElected(validator));
        }
        if self.status == TrustStatus::Banned {
            return Err(ReputationError::Banned);
        }
        let entry = self.entries.iter_mut().find(|e| e.step == step).ok_or(ReputationError::NoEntry(step))?;
        if !approve {
            self.status = TrustStatus::Banned;
            return Ok(());
        }
        if entry.approval == Approval::Pending {
            entry.approval = Approval::ApprovedBy(validator);
            self.approved += 1;
        }
        if self.status == TrustStatus::Untrusted && self.approved >= self.threshold {
            self.status = TrustStatus::Trusted;
        }
        Ok(())
    }

    pub fn ban(&mut self) {
        self.status = TrustStatus::Banned;
    }

    /// Steps are consecutive.
    pub fn chain_intact(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].step == w[0].step + 1)
    }
}

/// Admission control: at most `⌊t/2⌋` untrusted peers run at once, where
/// `t` counts trusted peers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinQueue {
    pub waiting: VecDeque<PeerId>,
    pub untrusted: BTreeSet<PeerId>,
    pub trusted: usize,
}

impl JoinQueue {
    pub fn new(trusted: usize) -> Self {
        Self { trusted, ..Self::default() }
    }

    pub fn cap(&self) -> usize {
        self.trusted / 2
    }

    pub fn enqueue(&mut self, p: PeerId) {
        self.waiting.push_back(p);
    }

    /// Moves waiting peers into the untrusted set while the cap allows.
    pub fn admit(&mut self) -> Vec<PeerId> {
        let mut out = Vec::new();
        while self.untrusted.len() < self.cap() {
            let Some(p) = self.waiting.pop_front() else { break };
            self.untrusted.insert(p);
            out.push(p);
        }
        out
    }

    pub fn on_trusted(&mut self, p: PeerId) {
        if self.untrusted.remove(&p) {
            self.trusted += 1;
        }
    }

    /// `was_trusted` distinguishes a banned trusted peer from a failed
    /// newcomer.
    pub fn on_banned(&mut self, p: PeerId, was_trusted: bool) {
        if !self.untrusted.remove(&p) && was_trusted {
            self.trusted = self.trusted.saturating_sub(1);
        }
    }

    pub fn within_cap(&self) -> bool {
        self.untrusted.len() <= self.cap()
    }
}

/// Expected trusted identities when identity `i` computes honestly with
/// probability `p_i`: `Σ p_i^T`.
pub fn sybil_expected_trusted(p: &[f64], t: u32) -> f64 {
    p.iter().map(|&x| math::powf(x, t as f64)).sum()
}

/// Probability that `m` identities sharing one compute unit evenly are all
/// trusted at once: `m^{−Tm}`.
pub fn temporary_majority(m: u32, t: u32) -> f64 {
    math::powf(m as f64, -((t * m) as f64))
}

/// One split-compute attacker: each step the unit serves identity `i` with
/// probability `p[i]`, and each identity is validated with probability
/// `check_rate`. An identity is trusted after `t` approvals and banned on
/// the first validation of a step it skipped. Returns how many identities
/// ended up trusted.
pub fn simulate_split_attacker(p: &[f64], t: u32, check_rate: f64, stream: &mut SeededStream) -> usize {
    let mut approvals = alloc::vec![0u32; p.len()];
    let mut alive = alloc::vec![true; p.len()];
    let cumulative: Vec<f64> = p.iter().scan(0.0, |acc, &x| { *acc += x; Some(*acc) }).collect();
    while alive.iter().zip(&approvals).any(|(&a, &k)| a && k < t) {
        let u = stream.next_open01();
        let served = cumulative.iter().position(|&c| u < c);
        for i in 0..p.len() {
            if !alive[i] || approvals[i] >= t || stream.next_open01() >= check_rate {
                continue;
            }
            if served == Some(i) {
                approvals[i] += 1;
            } else {
                alive[i] = false;
            }
        }
    }
    alive.iter().zip(&approvals).filter(|(&a, &k)| a && k >= t).count()
}
