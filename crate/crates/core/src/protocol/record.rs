//! Public evidence of one step, indexed from the signed messages.
//!
//! Every honest peer ends a step holding the same broadcast messages, and any
//! point-to-point part can be re-requested with its signature, so building a
//! record from the step's messages gives all of them the same view. The
//! trace auditor builds records the same way.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::checks::{self, part_metadata, PartMetadata};
use super::message::{AccuseReason, MessageKind, Payload, SignedMessage};
use super::PeerId;
use crate::crypto::{hash_value, Digest, HashMode, MprngPhase, MprngSession, PublicKey};
use crate::robustagg::{centered_clip, ClipConfig};
use crate::vecmath::{random_unit_direction, GradientVector, PartitionLayout};

/// Inputs of a step that every peer derives locally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMeta {
    pub step: u64,
    /// Non-banned peers at step start; all of them run the beacon.
    pub active: Vec<PeerId>,
    /// Gradient workers, ascending. Partition `j` belongs to `participants[j]`.
    pub participants: Vec<PeerId>,
    /// Batch seed of each participant, aligned with `participants`.
    pub seeds: Vec<u64>,
    /// `(checker, target)` pairs validating the previous step.
    pub validations: Vec<(PeerId, PeerId)>,
    /// Per-part gradient clipping level, if the clipped variant runs.
    pub lambda_k: Option<f64>,
    pub delta_max: f64,
    pub clip: ClipConfig,
    #[serde(skip)]
    pub x: GradientVector,
}

impl StepMeta {
    pub fn index_of(&self, p: PeerId) -> Option<usize> {
        self.participants.binary_search(&p).ok()
    }

    pub fn seed_of(&self, p: PeerId) -> Option<u64> {
        self.index_of(p).map(|i| self.seeds[i])
    }

    pub fn aggregator(&self, j: u32) -> Option<PeerId> {
        self.participants.get(j as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reports {
    pub checksums: Vec<f64>,
    pub norms: Vec<f64>,
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationCheck {
    pub sum_ok: bool,
    pub missing_part: bool,
    pub misreporters: Vec<PeerId>,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub meta: StepMeta,
    pub mode: HashMode,
    pub layout: PartitionLayout,
    pub messages: Vec<SignedMessage>,
    pub part_hashes: BTreeMap<PeerId, (Digest, Vec<Digest>)>,
    pub parts: BTreeMap<(PeerId, u32), Vec<f64>>,
    pub agg_hashes: BTreeMap<u32, Digest>,
    pub aggregates: BTreeMap<u32, Vec<f64>>,
    pub reports: BTreeMap<PeerId, Reports>,
    /// `(from, to, partition, about_part)`
    pub eliminations: Vec<(PeerId, PeerId, u32, bool)>,
    /// Bad part hashes: excluded before aggregation.
    pub pre_violators: BTreeSet<PeerId>,
    /// Every peer with a publicly visible violation this step.
    pub violators: BTreeSet<PeerId>,
    pub mprng_output: Option<[u8; 32]>,
    pub mprng_rounds: u32,
    /// Beacon participants dropped for equivocation, silence or a bad reveal.
    pub mprng_excluded: BTreeSet<PeerId>,
    pub z: Option<GradientVector>,
}

impl StepRecord {
    /// Indexes `msgs`. Messages with bad signatures or from unknown peers are
    /// dropped; `verified` memoizes signature checks by digest.
    pub fn build<'a>(
        meta: StepMeta,
        mode: HashMode,
        keys: &BTreeMap<PeerId, PublicKey>,
        msgs: impl IntoIterator<Item = &'a SignedMessage>,
        verified: &mut BTreeSet<Digest>,
    ) -> Self {
        let n = meta.participants.len();
        let layout = PartitionLayout::new(meta.x.len().max(n), n.max(1)).expect("d ≥ n checked by the engine");
        let mut seen = BTreeSet::new();
        let mut messages = Vec::new();
        for m in msgs {
            if m.message.step != meta.step || !seen.insert(m.digest()) {
                continue;
            }
            let ok = verified.contains(&m.digest())
                || keys.get(&m.message.sender).is_some_and(|k| m.verify(mode, k) && verified.insert(m.digest()));
            if ok {
                messages.push(m.clone());
            }
        }
        let mut rec = Self {
            meta,
            mode,
            layout,
            messages,
            part_hashes: BTreeMap::new(),
            parts: BTreeMap::new(),
            agg_hashes: BTreeMap::new(),
            aggregates: BTreeMap::new(),
            reports: BTreeMap::new(),
            eliminations: Vec::new(),
            pre_violators: BTreeSet::new(),
            violators: BTreeSet::new(),
            mprng_output: None,
            mprng_rounds: 0,
            mprng_excluded: BTreeSet::new(),
            z: None,
        };
        rec.index();
        rec
    }

    fn index(&mut self) {
        let n = self.meta.participants.len();
        let is_participant = |p: PeerId| self.meta.participants.binary_search(&p).is_ok();
        let mut by_key: BTreeMap<_, BTreeSet<Digest>> = BTreeMap::new();
        for m in &self.messages {
            if let Some(k) = m.message.equivocation_key() {
                by_key.entry(k).or_default().insert(m.digest());
            }
        }
        let equivocators: BTreeSet<(PeerId, MessageKind)> =
            by_key.iter().filter(|(_, d)| d.len() > 1).map(|((_, p, k, _), _)| (*p, *k)).collect();
        for (p, _) in &equivocators {
            self.violators.insert(*p);
        }

        let mut commits = BTreeMap::new();
        let mut reveals = BTreeMap::new();
        let mut checksums = BTreeMap::new();
        let mut norms = BTreeMap::new();
        let mut flags = BTreeMap::new();
        let mut agg_parts: Vec<(u32, &Vec<f64>)> = Vec::new();
        let mut raw_parts: Vec<(PeerId, u32, &Vec<f64>)> = Vec::new();
        for m in &self.messages {
            let s = m.message.sender;
            if equivocators.contains(&(s, m.message.kind())) {
                continue;
            }
            match &m.message.payload {
                Payload::PartHash { full, parts } if is_participant(s) => {
                    if parts.len() == n {
                        self.part_hashes.insert(s, (*full, parts.clone()));
                    }
                }
                Payload::Part { partition, values } => raw_parts.push((s, *partition, values)),
                Payload::AggHash { partition, digest } if self.meta.aggregator(*partition) == Some(s) => {
                    self.agg_hashes.insert(*partition, *digest);
                }
                Payload::AggPart { partition, values } if self.meta.aggregator(*partition) == Some(s) => {
                    agg_parts.push((*partition, values))
                }
                Payload::Checksum { values } if is_participant(s) => {
                    checksums.insert(s, values.clone());
                }
                Payload::Norm { values } if is_participant(s) => {
                    norms.insert(s, values.clone());
                }
                Payload::CheckFlag { flags: f } if is_participant(s) => {
                    flags.insert(s, f.clone());
                }
                Payload::Commit { round, digest } => {
                    commits.insert((*round, s), *digest);
                }
                Payload::Reveal { round, value, salt } => {
                    reveals.insert((*round, s), (*value, *salt));
                }
                Payload::Eliminate { target, reason, partition } => {
                    self.eliminations.push((s, *target, *partition, reason.about_part()));
                }
                _ => {}
            }
        }

        for &p in &self.meta.participants {
            if !self.part_hashes.contains_key(&p) {
                self.pre_violators.insert(p);
            }
        }
        self.violators.extend(self.pre_violators.iter().copied());

        for (s, j, values) in raw_parts {
            let Some((_, hashes)) = self.part_hashes.get(&s) else { continue };
            if (j as usize) < n
                && values.len() == self.layout.part_len(j as usize)
                && hashes[j as usize] == hash_value(self.mode, &values[..])
            {
                self.parts.insert((s, j), values.clone());
            }
        }

        for (j, values) in agg_parts {
            if let Some(h) = self.agg_hashes.get(&j) {
                if values.len() == self.layout.part_len(j as usize) && *h == hash_value(self.mode, &values[..]) {
                    self.aggregates.entry(j).or_insert_with(|| values.clone());
                }
            }
        }

        for (j, &a) in self.meta.participants.iter().enumerate() {
            if !self.agg_hashes.contains_key(&(j as u32)) {
                self.violators.insert(a);
            }
        }

        for &p in &self.meta.participants {
            let (Some(c), Some(nr), Some(f)) = (checksums.remove(&p), norms.remove(&p), flags.remove(&p)) else {
                self.violators.insert(p);
                continue;
            };
            let well_formed = c.len() == n
                && nr.len() == n
                && f.len() == n
                && c.iter().chain(&nr).all(|v| v.is_finite())
                && nr.iter().zip(&f).all(|(v, fl)| (*v > self.meta.delta_max) == *fl);
            if !well_formed {
                self.violators.insert(p);
                continue;
            }
            self.reports.insert(p, Reports { checksums: c, norms: nr, flags: f });
        }

        self.run_beacon(&commits, &reveals, &equivocators);
        if let Some(out) = self.mprng_output {
            let seed = crate::crypto::derive_seed(self.mode, &out, b"z");
            self.z = Some(random_unit_direction(seed, &self.layout));
        }
    }

    fn run_beacon(
        &mut self,
        commits: &BTreeMap<(u32, PeerId), Digest>,
        reveals: &BTreeMap<(u32, PeerId), ([u8; 32], [u8; 32])>,
        equivocators: &BTreeSet<(PeerId, MessageKind)>,
    ) {
        let mut excluded: BTreeSet<PeerId> = equivocators
            .iter()
            .filter(|(_, k)| matches!(k, MessageKind::Commit | MessageKind::Reveal))
            .map(|(p, _)| *p)
            .collect();
        for round in 0..=self.meta.active.len() as u32 {
            let members: Vec<PeerId> = self.meta.active.iter().copied().filter(|p| !excluded.contains(p)).collect();
            if members.is_empty() || !members.iter().any(|p| commits.contains_key(&(round, *p))) {
                break;
            }
            self.mprng_rounds = round + 1;
            let mut s = MprngSession::new(self.mode, members.iter().copied());
            for &p in &members {
                if let Some(c) = commits.get(&(round, p)) {
                    let _ = s.commit(p, *c);
                }
            }
            if s.phase() == MprngPhase::Reveal {
                for &p in &members {
                    if let Some((x, salt)) = reveals.get(&(round, p)) {
                        let _ = s.reveal(p, *x, *salt);
                    }
                }
            }
            let _ = s.close();
            if let Some(out) = s.output() {
                self.mprng_output = Some(out);
                break;
            }
            excluded.extend(s.offenders().iter().copied());
        }
        self.violators.extend(excluded.iter().copied());
        self.mprng_excluded = excluded;
    }

    pub fn step(&self) -> u64 {
        self.meta.step
    }

    pub fn n(&self) -> usize {
        self.meta.participants.len()
    }

    /// Contributors to partition `j`: workers with a valid part-hash
    /// broadcast that the aggregator did not eliminate over their part.
    pub fn contributors(&self, j: u32) -> Vec<PeerId> {
        let Some(a) = self.meta.aggregator(j) else { return Vec::new() };
        self.meta
            .participants
            .iter()
            .copied()
            .filter(|p| !self.pre_violators.contains(p))
            .filter(|p| !self.eliminations.iter().any(|&(f, t, _, about_part)| about_part && f == a && t == *p))
            .collect()
    }

    /// Contributors answerable for partition `j`'s checksums: those who did
    /// not eliminate its aggregator over the aggregate itself.
    pub fn accountable(&self, j: u32) -> Vec<PeerId> {
        let Some(a) = self.meta.aggregator(j) else { return Vec::new() };
        let mut c = self.contributors(j);
        c.retain(|p| !self.eliminations.iter().any(|&(f, t, _, about_part)| !about_part && f == *p && t == a));
        c
    }

    pub fn eps_chk(&self, j: u32) -> f64 {
        checks::eps_chk(self.layout.part_len(j as usize), self.meta.clip.tol)
    }

    pub fn tau(&self) -> f64 {
        self.meta.clip.final_tau()
    }

    /// `Σ s_p^j` over contributors: reported values for accountable peers,
    /// recomputed ones for peers that disowned the aggregate. `None` if a
    /// term is unavailable.
    pub fn reported_sum(&self, j: u32) -> Option<f64> {
        let acc = self.accountable(j);
        let mut sum = 0.0;
        for p in self.contributors(j) {
            sum += if acc.contains(&p) {
                self.reports.get(&p)?.checksums[j as usize]
            } else {
                self.true_metadata(p, j)?.checksum
            };
        }
        Some(sum)
    }

    pub fn reported_sum_ok(&self, j: u32) -> Option<bool> {
        let c = self.contributors(j).len();
        self.reported_sum(j).map(|s| checks::checksum_sum_ok(s, c, self.eps_chk(j)))
    }

    /// Norm, checksum and flag recomputed from a signed part.
    pub fn true_metadata(&self, p: PeerId, j: u32) -> Option<PartMetadata> {
        let part = self.parts.get(&(p, j))?;
        self.metadata_for(part, j)
    }

    pub fn metadata_for(&self, part: &[f64], j: u32) -> Option<PartMetadata> {
        let agg = self.aggregates.get(&j)?;
        let z = self.z.as_ref()?;
        Some(part_metadata(part, agg, self.layout.part(z, j as usize), self.tau(), self.meta.delta_max))
    }

    pub fn reported(&self, p: PeerId, j: u32) -> Option<(f64, f64, bool)> {
        let r = self.reports.get(&p)?;
        let j = j as usize;
        Some((r.norms[j], r.checksums[j], r.flags[j]))
    }

    pub fn aggregator_flagged(&self, j: u32) -> bool {
        let Some(a) = self.meta.aggregator(j) else { return false };
        self.accusations_from(a)
            .any(|(_, reason, partition)| reason == AccuseReason::Metadata && partition == j)
    }

    fn accusations_from(&self, p: PeerId) -> impl Iterator<Item = (PeerId, AccuseReason, u32)> + '_ {
        self.messages.iter().filter(move |m| m.message.sender == p).filter_map(|m| match m.message.payload {
            Payload::Accuse { target, reason, partition, .. } => Some((target, reason, partition)),
            _ => None,
        })
    }

    pub fn aggregator_accused(&self, j: u32, target: PeerId) -> bool {
        let Some(a) = self.meta.aggregator(j) else { return false };
        self.accusations_from(a)
            .any(|(t, reason, partition)| t == target && reason == AccuseReason::Metadata && partition == j)
    }

    /// Recomputes every contributor's metadata from its signed part.
    pub fn aggregation_check(&self, j: u32) -> AggregationCheck {
        let contributors = self.contributors(j);
        let acc = self.accountable(j);
        let mut sum = 0.0;
        let mut missing_part = self.aggregates.get(&j).is_none() || self.z.is_none();
        let mut misreporters = Vec::new();
        for &p in &contributors {
            let Some(md) = self.true_metadata(p, j) else {
                missing_part = true;
                continue;
            };
            sum += md.checksum;
            if !acc.contains(&p) {
                continue;
            }
            match self.reported(p, j) {
                Some((nr, s, f)) if md.same_bits(nr, s, f) => {}
                _ => misreporters.push(p),
            }
        }
        let sum_ok = checks::checksum_sum_ok(sum, contributors.len(), self.eps_chk(j));
        AggregationCheck { sum_ok, missing_part, misreporters }
    }

    /// CenteredClip over the contributors' signed parts, excluding `skip`.
    pub fn reaggregate(&self, j: u32, skip: &BTreeSet<PeerId>) -> Option<GradientVector> {
        let inputs: Vec<&Vec<f64>> = self
            .contributors(j)
            .into_iter()
            .filter(|p| !skip.contains(p))
            .filter_map(|p| self.parts.get(&(p, j)))
            .collect();
        centered_clip(&inputs, &self.meta.clip, None).ok().map(|o| o.v)
    }

    /// Partitions needing CheckAveraging: a majority of workers flag it, or
    /// its checksum sum cannot be evaluated.
    pub fn check_averaging_targets(&self) -> Vec<u32> {
        let n = self.n();
        (0..n as u32)
            .filter(|&j| {
                let flags = self
                    .accountable(j)
                    .iter()
                    .filter(|p| self.reports.get(p).is_some_and(|r| r.flags[j as usize]))
                    .count();
                checks::verification3_fires(flags, n) || self.reported_sum(j).is_none() || !self.aggregates.contains_key(&j)
            })
            .collect()
    }

    /// Partitions whose majority-flag rule fired, ignoring forced rechecks.
    pub fn verification3_triggers(&self) -> Vec<u32> {
        let n = self.n();
        (0..n as u32)
            .filter(|&j| {
                let flags = self
                    .accountable(j)
                    .iter()
                    .filter(|p| self.reports.get(p).is_some_and(|r| r.flags[j as usize]))
                    .count();
                checks::verification3_fires(flags, n)
            })
            .collect()
    }

    pub fn accusations(&self) -> impl Iterator<Item = &SignedMessage> {
        self.messages.iter().filter(|m| matches!(m.message.kind(), MessageKind::Accuse | MessageKind::Eliminate))
    }
}
