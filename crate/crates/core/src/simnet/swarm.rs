//! All peers of one run, driven through BTARD steps over the simulated
//! network.
//!
//! Each step runs as a fixed sequence of phases. Peers queue their sends at
//! the start of a phase; the event loop delivers them with random latency,
//! and whatever has not arrived when the phase ends is treated as never
//! sent. Honest peers act only on what they received. Broadcasts reach
//! every peer through the gossip channel; delivered point-to-point messages
//! stay available (signed) for any later recomputation.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::network::{validate_faults, FaultError, FaultRule, NetConfig, Network};
use super::queue::EventQueue;
use super::trace::{BarrierKind, TraceEvent, TraceKind, TraceLevel};
use crate::adversary::{self, AttackKind, AttackStrategy, Cover, ForgeContext, SlanderMode};
use crate::crypto::{self, hash, hash_value, tag, Digest, Encoder, HashMode, KeyPair, PublicKey};
use crate::optim::{presets, Objective};
use crate::protocol::{
    self, AccuseReason, BanEntry, BanLedger, Election, EliminateReason, GradientOracle, Message, Payload, PeerId, SignedMessage, StepMeta, StepRecord,
};
use crate::reputation::ReputationRecord;
use crate::robustagg::{centered_clip, AggError, ClipConfig};
use crate::vecmath::{GradientVector, PartitionLayout};

/// How the norm threshold of the majority check is set each step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum DeltaMaxPolicy {
    /// Never flags.
    #[default]
    Off,
    Fixed { value: f64 },
    /// `(1+√3)√2σ/√(n_k−m)` for gradient noise of total variance `σ²`.
    Gaussian { sigma: f64 },
    /// `2λ_k`, for the clipped variant.
    Clipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByzantinePeer {
    pub peer: PeerId,
    #[serde(flatten)]
    pub strategy: AttackStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub n: usize,
    /// Validators per step.
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub hash_mode: HashMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clip: ClipConfig,
    #[serde(default)]
    pub delta_max: DeltaMaxPolicy,
    /// Gradient clipping level `λ` of the clipped variant.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub byzantine: Vec<ByzantinePeer>,
    #[serde(default)]
    pub faults: Vec<FaultRule>,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub trace: TraceLevel,
}

impl SwarmConfig {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            hash_mode: HashMode::default(),
            seed: 0,
            clip: ClipConfig::default(),
            delta_max: DeltaMaxPolicy::Off,
            lambda: None,
            byzantine: Vec::new(),
            faults: Vec::new(),
            net: NetConfig::default(),
            trace: TraceLevel::default(),
        }
    }

    pub fn attack(mut self, peer: u32, kind: AttackKind, start: u64) -> Self {
        self.byzantine.push(ByzantinePeer { peer: PeerId(peer), strategy: AttackStrategy::new(kind, start) });
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SwarmError {
    #[error("need at least 2 peers, got {0}")]
    TooFewPeers(usize),
    #[error("dimension {d} is smaller than the peer count {n}")]
    DimensionTooSmall { d: usize, n: usize },
    #[error("{b} Byzantine peers out of {n}: need b < n/2")]
    ByzantineMajority { b: usize, n: usize },
    #[error("m = {m} validators exceeds (n − 2b)/2 = {max}")]
    TooManyValidators { m: usize, max: usize },
    #[error("Byzantine peer {0} is not in the swarm")]
    UnknownPeer(PeerId),
    #[error("peer {0} listed twice")]
    DuplicatePeer(PeerId),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error("clip config: {0}")]
    Clip(#[from] AggError),
    #[error("gradient clipping level must be positive")]
    Lambda,
    #[error("every peer is banned at step {0}")]
    AllBanned(u64),
}

/// What one step did.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub step: u64,
    pub aggregate: GradientVector,
    pub active: usize,
    /// Gradient workers and their batch seeds, in partition order.
    pub participants: Vec<(PeerId, u64)>,
    pub bans: Vec<BanEntry>,
    pub check_averaging: Vec<u32>,
    pub repaired: Vec<u32>,
    pub bytes_broadcast: u64,
    pub bytes_p2p: u64,
    pub mprng_rounds: u32,
    pub election: Election,
}

struct StepState {
    pool: Vec<SignedMessage>,
    seen: BTreeSet<Digest>,
    /// Point-to-point deliveries per recipient, as indexes into `pool`.
    inbox: BTreeMap<PeerId, Vec<usize>>,
    bytes_broadcast: u64,
    bytes_p2p: u64,
}

struct Pending {
    msg: SignedMessage,
    to: Option<PeerId>,
}

type Outbox = Vec<(SignedMessage, Option<PeerId>)>;

pub struct Swarm {
    cfg: SwarmConfig,
    d: usize,
    keys: Vec<KeyPair>,
    secrets: Vec<[u8; 32]>,
    roster: BTreeMap<PeerId, PublicKey>,
    byzantine: BTreeMap<PeerId, AttackStrategy>,
    pub ledger: BanLedger,
    pub records: BTreeMap<PeerId, ReputationRecord>,
    step: u64,
    seeds: Vec<u64>,
    election: Election,
    prev: Option<StepRecord>,
    net: Network,
    queue: EventQueue<Pending>,
    time: u64,
    trace: Vec<TraceEvent>,
    history: BTreeMap<PeerId, VecDeque<GradientVector>>,
    verified: BTreeSet<Digest>,
    attack_seed: u64,
}

fn seed_bytes(mode: HashMode, seed: u64, purpose: &[u8], i: u64) -> Digest {
    let mut e = Encoder::new(tag::SEED_CHAIN);
    e.u64(seed).bytes(purpose).u64(i);
    hash(mode, &e.finish())
}

impl Swarm {
    pub fn new(cfg: SwarmConfig, d: usize) -> Result<Self, SwarmError> {
        let n = cfg.n;
        if n < 2 {
            return Err(SwarmError::TooFewPeers(n));
        }
        if d < n {
            return Err(SwarmError::DimensionTooSmall { d, n });
        }
        let mut byzantine = BTreeMap::new();
        for b in &cfg.byzantine {
            if b.peer.0 as usize >= n {
                return Err(SwarmError::UnknownPeer(b.peer));
            }
            if byzantine.insert(b.peer, b.strategy.clone()).is_some() {
                return Err(SwarmError::DuplicatePeer(b.peer));
            }
        }
        let b = byzantine.len();
        if 2 * b >= n {
            return Err(SwarmError::ByzantineMajority { b, n });
        }
        if b > 0 && 2 * cfg.m > n - 2 * b {
            return Err(SwarmError::TooManyValidators { m: cfg.m, max: (n - 2 * b) / 2 });
        }
        validate_faults(&cfg.faults, &byzantine.keys().copied().collect())?;
        cfg.clip.validate()?;
        if cfg.lambda.is_some_and(|l| !(l > 0.0)) {
            return Err(SwarmError::Lambda);
        }
        let mode = cfg.hash_mode;
        let secrets: Vec<[u8; 32]> = (0..n as u64).map(|i| seed_bytes(mode, cfg.seed, b"key", i).0).collect();
        let keys: Vec<KeyPair> = secrets.iter().map(|s| KeyPair::from_secret(mode, *s)).collect();
        let roster = keys.iter().enumerate().map(|(i, k)| (PeerId(i as u32), k.public())).collect();
        let seeds = (0..n as u64).map(|i| seed_bytes(mode, cfg.seed, b"batch", i).to_seed()).collect();
        let records = (0..n as u32).map(|i| (PeerId(i), ReputationRecord::genesis(PeerId(i)))).collect();
        let net = Network::new(cfg.net, cfg.faults.clone(), seed_bytes(mode, cfg.seed, b"net", 0).to_seed());
        let attack_seed = seed_bytes(mode, cfg.seed, b"adversary", 0).to_seed();
        let mut s = Self {
            d,
            keys,
            secrets,
            roster,
            byzantine,
            ledger: BanLedger::new(),
            records,
            step: 0,
            seeds,
            election: Election::default(),
            prev: None,
            net,
            queue: EventQueue::new(),
            time: 0,
            trace: Vec::new(),
            history: BTreeMap::new(),
            verified: BTreeSet::new(),
            attack_seed,
            cfg,
        };
        if s.cfg.trace != TraceLevel::Off {
            let keys = s.roster.values().copied().collect();
            s.emit(TraceKind::Roster { mode, validators: s.cfg.m, keys });
        }
        Ok(s)
    }

    pub fn config(&self) -> &SwarmConfig {
        &self.cfg
    }

    /// Changes the gradient clipping level from the next step on.
    pub fn set_lambda(&mut self, lambda: Option<f64>) {
        self.cfg.lambda = lambda;
    }

    pub fn roster(&self) -> &BTreeMap<PeerId, PublicKey> {
        &self.roster
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn is_byzantine(&self, p: PeerId) -> bool {
        self.byzantine.contains_key(&p)
    }

    pub fn byzantine_peers(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.byzantine.keys().copied()
    }

    pub fn active(&self) -> Vec<PeerId> {
        (0..self.cfg.n as u32).map(PeerId).filter(|p| !self.ledger.is_banned(*p)).collect()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        core::mem::take(&mut self.trace)
    }

    fn emit(&mut self, kind: TraceKind) {
        if self.cfg.trace != TraceLevel::Off {
            self.trace.push(TraceEvent { time: self.time, kind });
        }
    }

    fn full(&self) -> bool {
        self.cfg.trace == TraceLevel::Full
    }

    fn attack(&self, p: PeerId) -> Option<&AttackKind> {
        self.byzantine.get(&p).and_then(|s| s.active_at(self.step))
    }

    fn sign(&self, p: PeerId, payload: Payload) -> SignedMessage {
        let msg = Message::new(self.step, p, payload);
        SignedMessage::sign(self.cfg.hash_mode, msg, &self.keys[p.0 as usize])
    }

    fn beacon_value(&self, p: PeerId, round: u32) -> ([u8; 32], [u8; 32]) {
        let mode = self.cfg.hash_mode;
        let mut e = Encoder::new(tag::MPRNG_COMMIT);
        e.raw(&self.secrets[p.0 as usize]).u64(self.step).u64(round as u64);
        let base = e.finish();
        let mut v = base.clone();
        v.push(0);
        let mut s = base;
        s.push(1);
        (hash(mode, &v).0, hash(mode, &s).0)
    }

    fn record(&mut self, meta: &StepMeta, st: &StepState) -> StepRecord {
        StepRecord::build(meta.clone(), self.cfg.hash_mode, &self.roster, &st.pool, &mut self.verified)
    }

    /// Sends `out` at the start of a phase and runs the event loop until the
    /// phase ends.
    fn run_phase(&mut self, st: &mut StepState, out: Outbox, active: usize) {
        let start = self.time;
        let len = self.cfg.net.phase_len;
        for (msg, to) in out {
            let kind = msg.message.kind();
            let from = msg.message.sender;
            let wire = msg.wire_len() as u64;
            if to == Some(from) {
                self.queue.push(start, Pending { msg, to });
                continue;
            }
            match to {
                Some(_) => st.bytes_p2p += wire,
                None => st.bytes_broadcast += wire * active.saturating_sub(1) as u64,
            }
            let sched = self.net.schedule(self.step, from, to, kind, len);
            if sched.delays.iter().all(Option::is_none) && self.full() {
                let digest = msg.digest();
                self.emit(TraceKind::Lost { actor: from, digest });
            }
            let copy = sched.delays[1].map(|d| {
                let m = if sched.mutate_copy {
                    self.sign(from, mutate_payload(&msg.message.payload))
                } else {
                    msg.clone()
                };
                (d, m)
            });
            if let Some(d) = sched.delays[0] {
                self.queue.push(start + d, Pending { msg, to });
            }
            if let Some((d, m)) = copy {
                self.queue.push(start + d, Pending { msg: m, to });
            }
        }
        let deadline = start + len - 1;
        while let Some((t, ev)) = self.queue.pop_until(deadline) {
            self.time = t;
            let digest = ev.msg.digest();
            let first = st.seen.insert(digest);
            if self.full() {
                let wire = first.then(|| crypto::hex::encode(&ev.msg.to_wire()));
                self.emit(TraceKind::Deliver { actor: ev.msg.message.sender, digest, to: ev.to, wire });
            }
            let idx = if first {
                st.pool.push(ev.msg);
                st.pool.len() - 1
            } else {
                match st.pool.iter().position(|m| m.digest() == digest) {
                    Some(i) => i,
                    None => continue,
                }
            };
            if let Some(to) = ev.to {
                let inbox = st.inbox.entry(to).or_default();
                if !inbox.contains(&idx) {
                    inbox.push(idx);
                }
            }
        }
        self.queue.clear();
        self.time = start + len;
    }

    fn inbox<'a>(&self, st: &'a StepState, p: PeerId) -> impl Iterator<Item = &'a SignedMessage> {
        st.inbox.get(&p).into_iter().flatten().map(move |&i| &st.pool[i])
    }

    fn delta_max(&self, workers: usize, lambda_k: Option<f64>) -> f64 {
        match self.cfg.delta_max {
            DeltaMaxPolicy::Off => f64::INFINITY,
            DeltaMaxPolicy::Fixed { value } => value,
            DeltaMaxPolicy::Gaussian { sigma } => presets::delta_max(sigma, workers),
            DeltaMaxPolicy::Clipped => lambda_k.map_or(f64::INFINITY, |l| 2.0 * l),
        }
    }

    /// Runs one BTARD step at `x` and returns the aggregated gradient along
    /// with everything the step changed.
    pub fn step(&mut self, objective: &Objective, x: &GradientVector) -> Result<StepReport, SwarmError> {
        let active = self.active();
        if active.is_empty() {
            return Err(SwarmError::AllBanned(self.step));
        }
        let (participants, validations) = assign_roles(&active, &self.election, &self.ledger);
        let n = participants.len();
        let layout = PartitionLayout::new(self.d, n).map_err(|_| SwarmError::DimensionTooSmall { d: self.d, n })?;
        let lambda_k = self.cfg.lambda.map(|l| presets::per_step_lambda(l, n));
        let meta = StepMeta {
            step: self.step,
            active: active.clone(),
            participants: participants.clone(),
            seeds: participants.iter().map(|p| self.seeds[p.0 as usize]).collect(),
            validations,
            lambda_k,
            delta_max: self.delta_max(n, lambda_k),
            clip: self.cfg.clip,
            x: x.clone(),
        };
        let x_digest = hash_value(self.cfg.hash_mode, x);
        let full = self.full();
        self.emit(TraceKind::StepStart {
            step: self.step,
            x_digest,
            meta: full.then(|| meta.clone()),
            x: full.then(|| x.to_vec()),
        });
        self.verified.clear();
        let mut st = StepState {
            pool: Vec::new(),
            seen: BTreeSet::new(),
            inbox: BTreeMap::new(),
            bytes_broadcast: 0,
            bytes_p2p: 0,
        };
        let mode = self.cfg.hash_mode;
        let shared_seed = self.attack_seed ^ self.step.wrapping_mul(0x9E37_79B9_7F4A_7C15);

        // Gradients, hash commitments, parts and beacon commitments.
        let mut true_grads = BTreeMap::new();
        for (&p, &seed) in participants.iter().zip(&meta.seeds) {
            true_grads.insert(p, objective.worker_gradient(x, seed, lambda_k, &layout));
        }
        let honest: Vec<&GradientVector> =
            true_grads.iter().filter(|(p, _)| !self.is_byzantine(**p)).map(|(_, g)| g).collect();
        let mut sent = BTreeMap::new();
        for (&p, &seed) in participants.iter().zip(&meta.seeds) {
            let own = &true_grads[&p];
            let g = match self.attack(p) {
                Some(kind) => {
                    let wrong = matches!(kind, AttackKind::WrongObjective)
                        .then(|| objective.wrong_gradient(x, seed).unwrap_or_else(|_| own.clone()));
                    let ctx = ForgeContext {
                        step: self.step,
                        own_true: own,
                        honest: &honest,
                        shared_seed,
                        history: self.history.get(&p),
                        wrong: wrong.as_ref(),
                    };
                    adversary::forge_gradient(kind, &ctx)
                }
                None => own.clone(),
            };
            sent.insert(p, g);
        }
        for p in self.byzantine.keys().copied().collect::<Vec<_>>() {
            if let Some(g) = true_grads.get(&p) {
                let h = self.history.entry(p).or_default();
                h.push_back(g.clone());
                if h.len() > 64 {
                    h.pop_front();
                }
            }
        }
        let mut out: Outbox = Vec::new();
        for &p in &participants {
            let g = &sent[&p];
            let parts: Vec<Digest> = (0..n).map(|j| hash_value(mode, layout.part(g, j))).collect();
            out.push((self.sign(p, Payload::PartHash { full: hash_value(mode, g), parts }), None));
            let attack = self.attack(p).cloned();
            for (j, &a) in participants.iter().enumerate() {
                let honest_agg = !self.is_byzantine(a);
                let mut values = layout.part(g, j).to_vec();
                match attack {
                    Some(AttackKind::SilentDrop) if honest_agg => continue,
                    Some(AttackKind::BadPart) if honest_agg && a != p => values.iter_mut().for_each(|v| *v += 1.0),
                    _ => {}
                }
                out.push((self.sign(p, Payload::Part { partition: j as u32, values }), Some(a)));
            }
        }
        for &p in &active {
            let (v, salt) = self.beacon_value(p, 0);
            let digest = crypto::commitment(mode, p, &v, &salt);
            out.push((self.sign(p, Payload::Commit { round: 0, digest }), None));
        }
        self.run_phase(&mut st, out, active.len());
        self.emit(TraceKind::Barrier { step: self.step, barrier: BarrierKind::PreAggregation });

        // Aggregation of the owned partitions.
        let r0 = self.record(&meta, &st);
        let mut out: Outbox = Vec::new();
        let mut own_aggregate = BTreeMap::new();
        for (j, &a) in participants.iter().enumerate() {
            let ju = j as u32;
            let byz = self.is_byzantine(a);
            let mut inputs: Vec<&[f64]> = Vec::new();
            for &p in &participants {
                if r0.pre_violators.contains(&p) {
                    continue;
                }
                if p == a {
                    inputs.push(layout.part(&sent[&p], j));
                    continue;
                }
                match r0.parts.get(&(p, ju)) {
                    Some(v) => inputs.push(v),
                    None if byz => {}
                    None => {
                        let got_any = self.inbox(&st, a).any(|m| {
                            m.message.sender == p && matches!(m.message.payload, Payload::Part { partition, .. } if partition == ju)
                        });
                        let reason = if got_any { EliminateReason::PartMismatch } else { EliminateReason::PartMissing };
                        if !got_any {
                            self.emit(TraceKind::Timeout { actor: p, observer: a, kind: "part".into() });
                        }
                        out.push((self.sign(a, Payload::Eliminate { target: p, reason, partition: ju }), None));
                    }
                }
            }
            let mut v = centered_clip(&inputs, &self.cfg.clip, None).map(|o| o.v).unwrap_or_else(|_| GradientVector::zeros(layout.part_len(j)));
            if let Some(AttackKind::AggShift { scale, .. }) = self.attack(a) {
                v = adversary::forge_aggregate(&v, *scale, meta.delta_max, shared_seed ^ (j as u64 + 1));
            }
            out.push((self.sign(a, Payload::AggHash { partition: ju, digest: hash_value(mode, &v) }), None));
            // Every active peer applies the aggregate, validators included;
            // the copy to self keeps it in the record when `a` works alone.
            let silent = matches!(self.attack(a), Some(AttackKind::SilentDrop));
            for &p in &active {
                if !(silent && !self.is_byzantine(p)) {
                    out.push((self.sign(a, Payload::AggPart { partition: ju, values: v.to_vec() }), Some(p)));
                }
            }
            own_aggregate.insert(a, v);
        }
        self.run_phase(&mut st, out, active.len());

        // Aggregate checks and beacon reveals.
        let r1 = self.record(&meta, &st);
        let mut out: Outbox = Vec::new();
        let mut local_agg: BTreeMap<PeerId, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
        for &p in &participants {
            let mut view = BTreeMap::new();
            for (j, &a) in participants.iter().enumerate() {
                let ju = j as u32;
                if a == p {
                    view.insert(ju, own_aggregate[&a].to_vec());
                    continue;
                }
                let Some(h) = r1.agg_hashes.get(&ju) else { continue };
                let got: Vec<&SignedMessage> = self
                    .inbox(&st, p)
                    .filter(|m| m.message.sender == a && matches!(m.message.payload, Payload::AggPart { partition, .. } if partition == ju))
                    .collect();
                let ok = got.iter().find_map(|m| match &m.message.payload {
                    Payload::AggPart { values, .. } if hash_value(mode, &values[..]) == *h => Some(values.clone()),
                    _ => None,
                });
                match ok {
                    Some(v) => {
                        view.insert(ju, v);
                    }
                    None if self.is_byzantine(p) => {}
                    None => {
                        let reason = if got.is_empty() { EliminateReason::AggMissing } else { EliminateReason::AggMismatch };
                        if got.is_empty() {
                            self.emit(TraceKind::Timeout { actor: a, observer: p, kind: "aggregate".into() });
                        }
                        out.push((self.sign(p, Payload::Eliminate { target: a, reason, partition: ju }), None));
                    }
                }
            }
            local_agg.insert(p, view);
        }
        for &p in &active {
            let (value, salt) = self.beacon_value(p, 0);
            out.push((self.sign(p, Payload::Reveal { round: 0, value, salt }), None));
        }
        self.run_phase(&mut st, out, active.len());

        // Further beacon rounds if someone aborted.
        let mut rb = self.record(&meta, &st);
        let mut round = 1u32;
        while rb.mprng_output.is_none() && (round as usize) <= active.len() && round <= 8 {
            let members: Vec<PeerId> = active.iter().copied().filter(|p| !rb.mprng_excluded.contains(p)).collect();
            if members.is_empty() {
                break;
            }
            let mut out: Outbox = Vec::new();
            for &p in &members {
                let (v, salt) = self.beacon_value(p, round);
                let digest = crypto::commitment(mode, p, &v, &salt);
                out.push((self.sign(p, Payload::Commit { round, digest }), None));
            }
            self.run_phase(&mut st, out, active.len());
            let mut out: Outbox = Vec::new();
            for &p in &members {
                let (value, salt) = self.beacon_value(p, round);
                out.push((self.sign(p, Payload::Reveal { round, value, salt }), None));
            }
            self.run_phase(&mut st, out, active.len());
            rb = self.record(&meta, &st);
            round += 1;
        }

        // Checksums, norms and flags.
        let mut out: Outbox = Vec::new();
        if let Some(z) = rb.z.clone() {
            let tau = self.cfg.clip.final_tau();
            let mut cover: BTreeMap<PeerId, BTreeMap<u32, f64>> = BTreeMap::new();
            for (j, &a) in participants.iter().enumerate() {
                let ju = j as u32;
                if !matches!(self.attack(a), Some(AttackKind::AggShift { cover: Cover::CoSigners, .. })) {
                    continue;
                }
                let acc = rb.accountable(ju);
                let mut total = 0.0;
                let mut colluders = BTreeMap::new();
                for &p in &acc {
                    let Some(md) = rb.true_metadata(p, ju) else { continue };
                    total += md.checksum;
                    if self.is_byzantine(p) {
                        colluders.insert(p, md.checksum);
                    }
                }
                for (p, s) in adversary::cover_checksums(total, &colluders) {
                    cover.entry(p).or_default().insert(ju, s);
                }
            }
            for &p in &participants {
                let view = &local_agg[&p];
                let g = &sent[&p];
                let (mut checksums, mut norms, mut flags) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
                for j in 0..n {
                    let ju = j as u32;
                    let md = view.get(&ju).map(|agg| {
                        protocol::part_metadata(layout.part(g, j), agg, layout.part(&z, j), tau, meta.delta_max)
                    });
                    let (nr, mut s, f) = md.map_or((0.0, 0.0, false), |m| (m.norm, m.checksum, m.flag));
                    if let Some(c) = cover.get(&p).and_then(|c| c.get(&ju)) {
                        s = *c;
                    }
                    checksums.push(s);
                    norms.push(nr);
                    flags.push(f);
                }
                out.push((self.sign(p, Payload::Checksum { values: checksums }), None));
                out.push((self.sign(p, Payload::Norm { values: norms }), None));
                out.push((self.sign(p, Payload::CheckFlag { flags }), None));
            }
        }
        self.run_phase(&mut st, out, active.len());

        // Round one: aggregators check contributors, validators replay the
        // previous step, slanderers accuse.
        let rv = self.record(&meta, &st);
        let mut out: Outbox = Vec::new();
        let mut recalculated = BTreeMap::new();
        for &a in &participants {
            if !self.is_byzantine(a) {
                for pl in protocol::aggregator_accusations(&rv, a) {
                    out.push((self.sign(a, pl), None));
                }
            }
        }
        if let Some(prev) = self.prev.take() {
            for &(c, u) in &meta.validations {
                let byz_checker = self.is_byzantine(c);
                let slander = matches!(self.attack(c), Some(AttackKind::Slander { .. }));
                let findings = protocol::replay_gradient(&prev, u, objective);
                if let Some(seed) = prev.meta.seed_of(u) {
                    let g = objective.worker_gradient(&prev.meta.x, seed, prev.meta.lambda_k, &prev.layout);
                    recalculated.insert(c, hash_value(mode, &g));
                }
                let accuse = if byz_checker {
                    if self.is_byzantine(u) {
                        false
                    } else {
                        slander || findings.as_ref().is_some_and(|f| !f.is_clean())
                    }
                } else {
                    findings.as_ref().is_some_and(|f| !f.is_clean())
                };
                if accuse {
                    let pl = Payload::Accuse { target: u, step: prev.step(), reason: AccuseReason::Gradient, partition: 0 };
                    out.push((self.sign(c, pl), None));
                }
            }
            self.prev = Some(prev);
        }
        let honest_participants: Vec<PeerId> = participants.iter().copied().filter(|p| !self.is_byzantine(*p)).collect();
        for (&b, _) in self.byzantine.clone().iter() {
            if self.ledger.is_banned(b) || honest_participants.is_empty() {
                continue;
            }
            let Some(AttackKind::Slander { mode: sm }) = self.attack(b).cloned() else { continue };
            let pick = (shared_seed ^ (b.0 as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)) % honest_participants.len() as u64;
            let target = honest_participants[pick as usize];
            let partition = meta.index_of(target).unwrap_or(0) as u32;
            let pl = match sm {
                SlanderMode::Accuse => Payload::Accuse { target, step: self.step, reason: AccuseReason::Gradient, partition: 0 },
                SlanderMode::Eliminate => Payload::Eliminate { target, reason: EliminateReason::AggMismatch, partition },
            };
            out.push((self.sign(b, pl), None));
        }
        self.run_phase(&mut st, out, active.len());

        // Round two: checksum sums.
        let r2 = self.record(&meta, &st);
        let mut out: Outbox = Vec::new();
        for &p in &honest_participants {
            for pl in protocol::checksum_accusations(&r2, p) {
                out.push((self.sign(p, pl), None));
            }
        }
        self.run_phase(&mut st, out, active.len());
        self.emit(TraceKind::Barrier { step: self.step, barrier: BarrierKind::Verification });

        let rec = self.record(&meta, &st);
        for m in rec.accusations() {
            let (actor, digest) = (m.message.sender, m.digest());
            self.emit(TraceKind::Accusation { actor, digest });
        }
        let conclusion = protocol::conclude_step(&rec, self.prev.as_ref(), &mut self.ledger, &self.roster, objective);
        for &partition in &conclusion.check_averaging {
            self.emit(TraceKind::Trigger { step: self.step, partition });
        }
        for b in &conclusion.bans {
            self.emit(TraceKind::Ban { actor: b.peer, step: b.step, cause: b.cause });
        }

        self.update_records(&rec, &meta, &recalculated);

        let election = next_election(mode, &rec, &self.ledger, self.cfg.m);
        self.seeds = next_seeds(mode, &rec, self.cfg.n);
        let aggregate_digest = hash_value(mode, &conclusion.aggregate);
        let ledger = self.ledger.digest(mode);
        self.emit(TraceKind::StepEnd { step: self.step, aggregate: aggregate_digest, ledger });

        let report = StepReport {
            step: self.step,
            aggregate: conclusion.aggregate,
            active: active.len(),
            participants: participants.iter().copied().zip(meta.seeds.iter().copied()).collect(),
            bans: conclusion.bans,
            check_averaging: conclusion.check_averaging,
            repaired: conclusion.repaired,
            bytes_broadcast: st.bytes_broadcast,
            bytes_p2p: st.bytes_p2p,
            mprng_rounds: rec.mprng_rounds,
            election: election.clone(),
        };
        self.election = election;
        self.prev = Some(rec);
        self.step += 1;
        Ok(report)
    }

    fn update_records(&mut self, rec: &StepRecord, meta: &StepMeta, recalculated: &BTreeMap<PeerId, Digest>) {
        let step = self.step;
        for &p in &meta.active {
            let digest = match (rec.part_hashes.get(&p), recalculated.get(&p)) {
                (Some((full, _)), _) => Some((*full, false)),
                (None, Some(d)) => Some((*d, true)),
                _ => None,
            };
            let key = &self.keys[p.0 as usize];
            let Some(r) = self.records.get_mut(&p) else { continue };
            match digest {
                Some((d, recalc)) => {
                    let mut e = Encoder::new(tag::RECORD);
                    e.u64(p.0 as u64).u64(step).raw(&d.0);
                    let sig = key.sign(&e.finish());
                    let _ = if recalc {
                        r.record_recalculated(step, d, sig, true)
                    } else {
                        r.record_gradient_hash(step, d, sig, true)
                    };
                }
                None => r.ban(),
            }
        }
        for &(c, u) in &meta.validations {
            if self.ledger.is_banned(u) {
                continue;
            }
            if let (Some(prev), Some(r)) = (self.prev.as_ref(), self.records.get_mut(&u)) {
                let _ = r.process_validation(prev.step(), c, true, true);
            }
        }
        for b in self.ledger.entries() {
            if let Some(r) = self.records.get_mut(&b.peer) {
                r.ban();
            }
        }
    }
}

/// Splits the active peers of a step into gradient workers and the
/// validation pairs of the elected checkers still in the swarm.
pub fn assign_roles(active: &[PeerId], election: &Election, ledger: &BanLedger) -> (Vec<PeerId>, Vec<(PeerId, PeerId)>) {
    let checkers: BTreeSet<PeerId> = election.checkers().filter(|c| !ledger.is_banned(*c)).collect();
    let mut participants: Vec<PeerId> = active.iter().copied().filter(|p| !checkers.contains(p)).collect();
    if participants.is_empty() {
        participants = active.to_vec();
    }
    let validations = election.pairs.iter().copied().filter(|(c, _)| checkers.contains(c)).collect();
    (participants, validations)
}

/// Validators for the step after `rec`, drawn from its unbanned workers.
pub fn next_election(mode: HashMode, rec: &StepRecord, ledger: &BanLedger, m: usize) -> Election {
    match rec.mprng_output {
        Some(r) => {
            let pool: Vec<PeerId> = rec.meta.participants.iter().copied().filter(|p| !ledger.is_banned(*p)).collect();
            protocol::elect_validators(crypto::derive_seed(mode, &r, b"validators"), &pool, m)
        }
        None => Election::default(),
    }
}

/// Batch seeds of every peer for the step after `rec`.
pub fn next_seeds(mode: HashMode, rec: &StepRecord, n: usize) -> Vec<u64> {
    let chain = rec.mprng_output.map_or_else(|| hash(mode, &rec.step().to_le_bytes()).0, |r| r);
    (0..n)
        .map(|i| {
            let mut e = Encoder::new(tag::SEED_CHAIN);
            e.raw(&chain).u64(i as u64);
            hash(mode, &e.finish()).to_seed()
        })
        .collect()
}

/// A different payload of the same kind, for equivocation faults.
pub fn mutate_payload(p: &Payload) -> Payload {
    let mut p = p.clone();
    let bump = |v: &mut Vec<f64>| {
        if let Some(x) = v.first_mut() {
            *x += 1.0;
        }
    };
    match &mut p {
        Payload::PartHash { full, .. } => full.0[0] ^= 1,
        Payload::AggHash { digest, .. } | Payload::Commit { digest, .. } => digest.0[0] ^= 1,
        Payload::Part { values, .. } | Payload::AggPart { values, .. } => bump(values),
        Payload::Checksum { values } | Payload::Norm { values } => bump(values),
        Payload::CheckFlag { flags } => {
            if let Some(f) = flags.first_mut() {
                *f = !*f;
            }
        }
        Payload::Reveal { value, .. } => value[0] ^= 1,
        Payload::Accuse { partition, .. } | Payload::Eliminate { partition, .. } => *partition += 1,
    }
    p
}
