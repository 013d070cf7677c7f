//! Deciding accusations from public evidence, and the accusations an honest
//! peer raises itself.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use super::ledger::{BanCause, Verdict};
use super::message::{AccuseReason, Payload, SignedMessage};
use super::record::StepRecord;
use super::PeerId;
use crate::crypto::hash_value;
use crate::vecmath::{GradientVector, PartitionLayout};

/// Recomputes a peer's gradient from public inputs.
pub trait GradientOracle {
    /// Gradient at `x` on the batch drawn from `seed`, with each part clipped
    /// to `lambda_k` when given.
    fn worker_gradient(&self, x: &[f64], seed: u64, lambda_k: Option<f64>, layout: &PartitionLayout) -> GradientVector;
}

/// What a replay of one peer's gradient uncovered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientFindings {
    pub hash_mismatch: bool,
    /// Partitions whose reported metadata disagrees with the replayed part.
    pub metadata_mismatch: Vec<u32>,
}

impl GradientFindings {
    pub fn is_clean(&self) -> bool {
        !self.hash_mismatch && self.metadata_mismatch.is_empty()
    }
}

/// Replays `target`'s gradient for the step in `rec`. `None` if `target` did
/// not compute a gradient that step.
pub fn replay_gradient(rec: &StepRecord, target: PeerId, oracle: &dyn GradientOracle) -> Option<GradientFindings> {
    let seed = rec.meta.seed_of(target)?;
    let g = oracle.worker_gradient(&rec.meta.x, seed, rec.meta.lambda_k, &rec.layout);
    let mut f = GradientFindings::default();
    match rec.part_hashes.get(&target) {
        Some((full, parts)) => {
            f.hash_mismatch = *full != hash_value(rec.mode, &g)
                || (0..rec.n()).any(|j| parts[j] != hash_value(rec.mode, rec.layout.part(&g, j)));
        }
        None => f.hash_mismatch = true,
    }
    for j in 0..rec.n() as u32 {
        if !rec.accountable(j).contains(&target) {
            continue;
        }
        let Some(md) = rec.metadata_for(rec.layout.part(&g, j as usize), j) else { continue };
        match rec.reported(target, j) {
            Some((nr, s, fl)) if md.same_bits(nr, s, fl) => {}
            _ => f.metadata_mismatch.push(j),
        }
    }
    Some(f)
}

fn aggregator_and_misreporters(rec: &StepRecord, j: u32, v: &mut Verdict) {
    if let Some(a) = rec.meta.aggregator(j) {
        v.bans.push((a, BanCause::AggregationFraud));
    }
    for p in rec.aggregation_check(j).misreporters {
        v.bans.push((p, BanCause::CoverUp));
    }
}

/// Decides one Accuse message. `now` is the current step; `prev` the one
/// before it, whose gradients are being validated.
pub fn judge(m: &SignedMessage, now: &StepRecord, prev: Option<&StepRecord>, oracle: &dyn GradientOracle) -> Verdict {
    let accuser = m.message.sender;
    let Payload::Accuse { target, step, reason, partition } = m.message.payload else {
        return Verdict::default();
    };
    let malformed = Verdict::ban(accuser, BanCause::ProtocolViolation);
    let false_accusation = Verdict::ban(accuser, BanCause::FalseAccusation);
    let rec = if step == now.step() {
        now
    } else if let Some(p) = prev.filter(|p| p.step() == step) {
        p
    } else {
        return malformed;
    };
    if rec.meta.index_of(target).is_none() || partition as usize >= rec.n() {
        return malformed;
    }
    match reason {
        AccuseReason::Gradient => {
            let Some(f) = replay_gradient(rec, target, oracle) else { return malformed };
            if f.is_clean() {
                return false_accusation;
            }
            let mut v = Verdict::ban(
                target,
                if f.hash_mismatch { BanCause::GradientFraud } else { BanCause::CoverUp },
            );
            for &l in &f.metadata_mismatch {
                let chk = rec.aggregation_check(l);
                if !chk.sum_ok || chk.missing_part {
                    aggregator_and_misreporters(rec, l, &mut v);
                }
            }
            v
        }
        AccuseReason::Metadata => {
            if !rec.accountable(partition).contains(&target) {
                return false_accusation;
            }
            let Some(md) = rec.true_metadata(target, partition) else { return false_accusation };
            match rec.reported(target, partition) {
                Some((nr, s, fl)) if md.same_bits(nr, s, fl) => false_accusation,
                _ => Verdict::ban(target, BanCause::CoverUp),
            }
        }
        AccuseReason::Aggregate => {
            if rec.meta.aggregator(partition) != Some(target) {
                return malformed;
            }
            if rec.reported_sum_ok(partition) != Some(false) {
                return false_accusation;
            }
            let chk = rec.aggregation_check(partition);
            let covered = chk.misreporters.iter().all(|&p| rec.aggregator_accused(partition, p));
            if chk.sum_ok && !chk.missing_part && covered {
                return false_accusation;
            }
            let mut v = Verdict::default();
            aggregator_and_misreporters(rec, partition, &mut v);
            v
        }
    }
}

/// Round-one accusations of the aggregator `me`: contributors whose reported
/// metadata disagrees with their signed part.
pub fn aggregator_accusations(rec: &StepRecord, me: PeerId) -> Vec<Payload> {
    let Some(j) = rec.meta.index_of(me) else { return Vec::new() };
    let j = j as u32;
    if !rec.aggregates.contains_key(&j) {
        return Vec::new();
    }
    rec.accountable(j)
        .into_iter()
        .filter(|&p| p != me && rec.reports.contains_key(&p))
        .filter(|&p| match (rec.true_metadata(p, j), rec.reported(p, j)) {
            (Some(md), Some((nr, s, fl))) => !md.same_bits(nr, s, fl),
            _ => false,
        })
        .map(|p| Payload::Accuse { target: p, step: rec.step(), reason: AccuseReason::Metadata, partition: j })
        .collect()
}

/// Round-two accusations: aggregators whose checksum sum fails, unless they
/// already named a culprit themselves.
pub fn checksum_accusations(rec: &StepRecord, me: PeerId) -> Vec<Payload> {
    (0..rec.n() as u32)
        .filter(|&j| rec.reported_sum_ok(j) == Some(false) && !rec.aggregator_flagged(j))
        .filter_map(|j| rec.meta.aggregator(j).filter(|&a| a != me).map(|a| (a, j)))
        .map(|(a, j)| Payload::Accuse { target: a, step: rec.step(), reason: AccuseReason::Aggregate, partition: j })
        .collect()
}

/// Outcome of end-of-step processing.
#[derive(Debug, Clone, Default)]
pub struct StepConclusion {
    pub bans: Vec<super::BanEntry>,
    /// Partitions that went through CheckAveraging.
    pub check_averaging: Vec<u32>,
    /// Partitions rebuilt from signed parts because their aggregator was
    /// banned or silent.
    pub repaired: Vec<u32>,
    pub aggregate: GradientVector,
}

/// Public violations, CheckAveraging, sorted accusations, then assembly of
/// the aggregated gradient.
pub fn conclude_step(
    now: &StepRecord,
    prev: Option<&StepRecord>,
    ledger: &mut super::BanLedger,
    keys: &alloc::collections::BTreeMap<PeerId, crate::crypto::PublicKey>,
    oracle: &dyn GradientOracle,
) -> StepConclusion {
    let step = now.step();
    let mut out = StepConclusion::default();
    let ban = |ledger: &mut super::BanLedger, out: &mut StepConclusion, p: PeerId, cause: BanCause| {
        if ledger.ban(p, step, cause) {
            out.bans.push(super::BanEntry { peer: p, step, cause });
        }
    };
    for &p in &now.violators {
        ban(ledger, &mut out, p, BanCause::ProtocolViolation);
    }

    let mut rebuilt = alloc::collections::BTreeMap::new();
    let targets = now.check_averaging_targets();
    for &j in &targets {
        let Some(v) = now.reaggregate(j, &BTreeSet::new()) else { continue };
        let honest = now.aggregates.get(&j).is_some_and(|a| same_bits(a, &v));
        if !honest {
            let cause = if now.aggregates.contains_key(&j) { BanCause::AggregationFraud } else { BanCause::ProtocolViolation };
            if let Some(a) = now.meta.aggregator(j) {
                ban(ledger, &mut out, a, cause);
            }
            rebuilt.insert(j, v);
        } else {
            for p in now.aggregation_check(j).misreporters {
                ban(ledger, &mut out, p, BanCause::CoverUp);
            }
        }
    }
    out.check_averaging = targets;

    let sorted = super::sorted_accusations(now.accusations(), keys);
    out.bans.extend(super::process_accusations(ledger, step, sorted, |m, _| judge(m, now, prev, oracle)));

    let mut parts = Vec::with_capacity(now.n());
    for j in 0..now.n() as u32 {
        let a = now.meta.aggregator(j).expect("partition has an aggregator");
        let part = match (rebuilt.remove(&j), now.aggregates.get(&j)) {
            (Some(v), _) => Some(v.into_inner()),
            (None, Some(v)) if !ledger.is_banned(a) => Some(v.clone()),
            _ => None,
        };
        let part = part.unwrap_or_else(|| {
            out.repaired.push(j);
            now.reaggregate(j, &BTreeSet::new())
                .map(GradientVector::into_inner)
                .unwrap_or_else(|| alloc::vec![0.0; now.layout.part_len(j as usize)])
        });
        parts.push(part);
    }
    out.aggregate = crate::vecmath::merge(&parts).unwrap_or_default();
    out
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
