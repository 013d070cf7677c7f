//! Independent replay of a full run trace.
//!
//! The auditor trusts nothing but the roster and the signed wire bytes. It
//! re-derives each step's roles and seeds from its own ban ledger and the
//! previous step's beacon output, rebuilds the public record from the
//! delivered messages, reruns the end-of-step verdicts and compares bans,
//! aggregate and ledger against what the trace claims.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::crypto::{hash_value, HashMode, PublicKey};
use crate::protocol::{self, BanEntry, BanLedger, Election, GradientOracle, PeerId, SignedMessage, StepMeta, StepRecord};
use crate::simnet::{assign_roles, next_election, next_seeds, TraceEvent, TraceKind};
use crate::vecmath::GradientVector;

/// A point where the replay disagrees with the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub step: u64,
    pub what: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: {}", self.step, self.what)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub steps: u64,
    /// Bans as re-derived by the replay.
    pub bans: Vec<BanEntry>,
    pub divergences: Vec<Divergence>,
}

impl AuditReport {
    pub fn is_consistent(&self) -> bool {
        self.divergences.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("trace has no roster")]
    NoRoster,
    #[error("trace contains no steps")]
    Empty,
    #[error("step {0} carries no inputs; only full traces can be audited")]
    NotFull(u64),
    #[error("trace ends inside step {0}")]
    Truncated(u64),
    #[error("{0} event outside any step")]
    Stray(&'static str),
}

struct Open {
    meta: StepMeta,
    messages: Vec<SignedMessage>,
    claimed: Vec<BanEntry>,
}

struct Auditor<'a> {
    mode: HashMode,
    validators: usize,
    keys: BTreeMap<PeerId, PublicKey>,
    ledger: BanLedger,
    election: Election,
    seeds: Option<Vec<u64>>,
    prev: Option<StepRecord>,
    oracle: &'a dyn GradientOracle,
    report: AuditReport,
}

impl Auditor<'_> {
    fn diverge(&mut self, step: u64, what: String) {
        self.report.divergences.push(Divergence { step, what });
    }

    fn open(&mut self, step: u64, x_digest: crate::Digest, meta: StepMeta, x: Vec<f64>) -> Open {
        let mut meta = meta;
        meta.x = GradientVector::from(x);
        if meta.step != step || step != self.report.steps {
            self.diverge(step, format!("out-of-order step (expected {})", self.report.steps));
        }
        if hash_value(self.mode, &meta.x) != x_digest {
            self.diverge(step, "iterate does not match its digest".into());
        }
        let active: Vec<PeerId> = self.keys.keys().copied().filter(|p| !self.ledger.is_banned(*p)).collect();
        if meta.active != active {
            self.diverge(step, format!("active set {:?}, expected {:?}", meta.active, active));
        }
        let (participants, validations) = assign_roles(&active, &self.election, &self.ledger);
        if meta.participants != participants || meta.validations != validations {
            self.diverge(step, "worker or validator roles differ from the election".into());
        }
        if let Some(seeds) = &self.seeds {
            let expected: Vec<u64> = meta.participants.iter().map(|p| seeds[p.0 as usize]).collect();
            if meta.seeds != expected {
                self.diverge(step, "batch seeds differ from the beacon chain".into());
            }
        }
        Open { meta, messages: Vec::new(), claimed: Vec::new() }
    }

    fn close(&mut self, open: Open, aggregate: crate::Digest, ledger: crate::Digest) {
        let step = open.meta.step;
        let rec = StepRecord::build(open.meta, self.mode, &self.keys, &open.messages, &mut BTreeSet::new());
        let out = protocol::conclude_step(&rec, self.prev.as_ref(), &mut self.ledger, &self.keys, self.oracle);
        let mut derived = out.bans.clone();
        let mut claimed = open.claimed;
        derived.sort_by_key(|b| b.peer);
        claimed.sort_by_key(|b| b.peer);
        if derived != claimed {
            self.diverge(step, format!("bans {claimed:?} in trace, replay gives {derived:?}"));
        }
        if hash_value(self.mode, &out.aggregate) != aggregate {
            self.diverge(step, "aggregated gradient differs".into());
        }
        if self.ledger.digest(self.mode) != ledger {
            self.diverge(step, "ban ledger digest differs".into());
        }
        self.report.bans.extend(out.bans);
        self.election = next_election(self.mode, &rec, &self.ledger, self.validators);
        self.seeds = Some(next_seeds(self.mode, &rec, self.keys.len()));
        self.prev = Some(rec);
        self.report.steps += 1;
    }
}

/// Replays `events` (a full trace) against `oracle`, the objective the run
/// was trained on.
pub fn audit(events: &[TraceEvent], oracle: &dyn GradientOracle) -> Result<AuditReport, AuditError> {
    let mut it = events.iter();
    let (mode, validators, keys) = loop {
        match it.next().map(|e| &e.kind) {
            Some(TraceKind::Roster { mode, validators, keys }) => break (*mode, *validators, keys),
            Some(_) => continue,
            None => return Err(AuditError::NoRoster),
        }
    };
    let mut a = Auditor {
        mode,
        validators,
        keys: keys.iter().enumerate().map(|(i, k)| (PeerId(i as u32), *k)).collect(),
        ledger: BanLedger::new(),
        election: Election::default(),
        seeds: None,
        prev: None,
        oracle,
        report: AuditReport::default(),
    };
    let mut open: Option<Open> = None;
    for ev in it {
        match &ev.kind {
            TraceKind::StepStart { step, x_digest, meta, x } => {
                if let Some(o) = &open {
                    return Err(AuditError::Truncated(o.meta.step));
                }
                let (Some(meta), Some(x)) = (meta, x) else { return Err(AuditError::NotFull(*step)) };
                open = Some(a.open(*step, *x_digest, meta.clone(), x.clone()));
            }
            TraceKind::Deliver { digest, wire: Some(wire), .. } => {
                let o = open.as_mut().ok_or(AuditError::Stray("deliver"))?;
                let step = o.meta.step;
                let decoded = crate::crypto::hex::decode(wire).and_then(|b| SignedMessage::from_wire(mode, &b).ok());
                match decoded {
                    Some(m) if m.digest() == *digest => o.messages.push(m),
                    Some(_) => a.diverge(step, format!("message {} does not match its digest", digest.to_hex())),
                    None => a.diverge(step, format!("message {} does not decode", digest.to_hex())),
                }
            }
            TraceKind::Ban { actor, step, cause } => {
                let o = open.as_mut().ok_or(AuditError::Stray("ban"))?;
                o.claimed.push(BanEntry { peer: *actor, step: *step, cause: *cause });
            }
            TraceKind::StepEnd { aggregate, ledger, .. } => {
                let o = open.take().ok_or(AuditError::Stray("step-end"))?;
                a.close(o, *aggregate, *ledger);
            }
            _ => {}
        }
    }
    if let Some(o) = open {
        return Err(AuditError::Truncated(o.meta.step));
    }
    if a.report.steps == 0 {
        return Err(AuditError::Empty);
    }
    Ok(a.report)
}
