use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::message::{MessageKind, Payload, SignedMessage};
use super::PeerId;
use crate::crypto::{hash, Encoder, HashMode, PublicKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BanCause {
    GradientFraud,
    AggregationFraud,
    FalseAccusation,
    ProtocolViolation,
    MutualEliminate,
    CoverUp,
}

impl BanCause {
    pub const ALL: [BanCause; 6] = [
        Self::GradientFraud,
        Self::AggregationFraud,
        Self::FalseAccusation,
        Self::ProtocolViolation,
        Self::MutualEliminate,
        Self::CoverUp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GradientFraud => "gradient-fraud",
            Self::AggregationFraud => "aggregation-fraud",
            Self::FalseAccusation => "false-accusation",
            Self::ProtocolViolation => "protocol-violation",
            Self::MutualEliminate => "mutual-eliminate",
            Self::CoverUp => "cover-up",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BanEntry {
    pub peer: PeerId,
    pub step: u64,
    pub cause: BanCause,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BanLedger {
    banned: BTreeMap<PeerId, BanEntry>,
}

impl BanLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_banned(&self, p: PeerId) -> bool {
        self.banned.contains_key(&p)
    }

    /// Returns `false` when the peer was already banned.
    pub fn ban(&mut self, peer: PeerId, step: u64, cause: BanCause) -> bool {
        if self.banned.contains_key(&peer) {
            return false;
        }
        self.banned.insert(peer, BanEntry { peer, step, cause });
        true
    }

    pub fn get(&self, p: PeerId) -> Option<&BanEntry> {
        self.banned.get(&p)
    }

    pub fn entries(&self) -> impl Iterator<Item = &BanEntry> {
        self.banned.values()
    }

    pub fn len(&self) -> usize {
        self.banned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banned.is_empty()
    }

    pub fn count(&self, cause: BanCause) -> usize {
        self.banned.values().filter(|e| e.cause == cause).count()
    }

    pub fn banned_at(&self, step: u64) -> impl Iterator<Item = &BanEntry> {
        self.banned.values().filter(move |e| e.step == step)
    }

    /// Canonical digest, equal across peers iff the ledgers are identical.
    pub fn digest(&self, mode: HashMode) -> crate::Digest {
        let mut e = Encoder::new(crate::crypto::tag::RECORD);
        e.len(self.banned.len());
        for b in self.banned.values() {
            e.u64(b.peer.0 as u64).u64(b.step).u8(b.cause as u8);
        }
        hash(mode, &e.finish())
    }
}

/// Sort key for end-of-step processing: Accuse before Eliminate, then by
/// accuser key, then by target key, then by message digest.
pub fn processing_key(m: &SignedMessage, keys: &BTreeMap<PeerId, PublicKey>) -> Option<(u8, [u8; 32], [u8; 32], [u8; 32])> {
    let (rank, target) = match &m.message.payload {
        Payload::Accuse { target, .. } => (0, *target),
        Payload::Eliminate { target, .. } => (1, *target),
        _ => return None,
    };
    let accuser = keys.get(&m.message.sender)?.0;
    let target = keys.get(&target)?.0;
    Some((rank, accuser, target, m.digest().0))
}

/// Sorted accusations among `msgs`; unknown peers are dropped.
pub fn sorted_accusations<'a>(
    msgs: impl IntoIterator<Item = &'a SignedMessage>,
    keys: &BTreeMap<PeerId, PublicKey>,
) -> Vec<&'a SignedMessage> {
    let mut v: Vec<_> = msgs
        .into_iter()
        .filter(|m| matches!(m.message.kind(), MessageKind::Accuse | MessageKind::Eliminate))
        .filter_map(|m| processing_key(m, keys).map(|k| (k, m)))
        .collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v.dedup_by(|a, b| a.0 .3 == b.0 .3);
    v.into_iter().map(|(_, m)| m).collect()
}

/// Outcome of judging one accusation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Verdict {
    pub bans: Vec<(PeerId, BanCause)>,
}

impl Verdict {
    pub fn ban(peer: PeerId, cause: BanCause) -> Self {
        Self { bans: alloc::vec![(peer, cause)] }
    }
}

/// Applies sorted accusations to the ledger. Messages whose accuser or target
/// is already banned are skipped. Eliminate bans both sides; Accuse bans
/// whatever `judge` decides.
pub fn process_accusations<'a>(
    ledger: &mut BanLedger,
    step: u64,
    sorted: impl IntoIterator<Item = &'a SignedMessage>,
    mut judge: impl FnMut(&SignedMessage, &BanLedger) -> Verdict,
) -> Vec<BanEntry> {
    let mut applied = Vec::new();
    for m in sorted {
        let accuser = m.message.sender;
        let target = match m.message.payload {
            Payload::Accuse { target, .. } | Payload::Eliminate { target, .. } => target,
            _ => continue,
        };
        if accuser == target || ledger.is_banned(accuser) || ledger.is_banned(target) {
            continue;
        }
        let verdict = match m.message.payload {
            Payload::Eliminate { .. } => Verdict {
                bans: alloc::vec![(accuser, BanCause::MutualEliminate), (target, BanCause::MutualEliminate)],
            },
            _ => judge(m, ledger),
        };
        for (peer, cause) in verdict.bans {
            if ledger.ban(peer, step, cause) {
                applied.push(BanEntry { peer, step, cause });
            }
        }
    }
    applied
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::protocol::message::{AccuseReason, EliminateReason, Message};

    const M: HashMode = HashMode::FastSim;

    fn roster(n: u32) -> (Vec<KeyPair>, BTreeMap<PeerId, PublicKey>) {
        let keys: Vec<KeyPair> = (0..n).map(|i| KeyPair::from_secret(M, [i as u8 + 1; 32])).collect();
        let map = keys.iter().enumerate().map(|(i, k)| (PeerId(i as u32), k.public())).collect();
        (keys, map)
    }

    fn accuse(keys: &[KeyPair], from: u32, to: u32) -> SignedMessage {
        let p = Payload::Accuse { target: PeerId(to), step: 0, reason: AccuseReason::Gradient, partition: 0 };
        SignedMessage::sign(M, Message::new(0, PeerId(from), p), &keys[from as usize])
    }

    fn eliminate(keys: &[KeyPair], from: u32, to: u32) -> SignedMessage {
        let p = Payload::Eliminate { target: PeerId(to), reason: EliminateReason::PartMissing, partition: 0 };
        SignedMessage::sign(M, Message::new(0, PeerId(from), p), &keys[from as usize])
    }

    #[test]
    fn accuse_sorts_before_eliminate_and_banned_peers_are_skipped() {
        let (keys, map) = roster(4);
        let msgs = [eliminate(&keys, 0, 1), accuse(&keys, 2, 1), eliminate(&keys, 3, 1)];
        let sorted = sorted_accusations(msgs.iter(), &map);
        assert_eq!(sorted[0].message.kind(), MessageKind::Accuse);
        let mut ledger = BanLedger::new();
        // Judge says the accused (1) is guilty.
        let applied = process_accusations(&mut ledger, 0, sorted, |m, _| match m.message.payload {
            Payload::Accuse { target, .. } => Verdict::ban(target, BanCause::GradientFraud),
            _ => unreachable!(),
        });
        assert_eq!(applied.len(), 1);
        assert!(ledger.is_banned(PeerId(1)));
        assert!(!ledger.is_banned(PeerId(0)) && !ledger.is_banned(PeerId(3)));
    }

    #[test]
    fn order_is_independent_of_arrival() {
        let (keys, map) = roster(6);
        let msgs = [eliminate(&keys, 0, 1), eliminate(&keys, 2, 1), eliminate(&keys, 1, 5), accuse(&keys, 4, 3)];
        let run = |order: &[usize]| {
            let mut ledger = BanLedger::new();
            let sorted = sorted_accusations(order.iter().map(|&i| &msgs[i]), &map);
            process_accusations(&mut ledger, 0, sorted, |m, _| Verdict::ban(m.message.sender, BanCause::FalseAccusation));
            ledger
        };
        let a = run(&[0, 1, 2, 3]);
        let b = run(&[3, 2, 1, 0]);
        assert_eq!(a, b);
        assert_eq!(a.digest(M), b.digest(M));
        // Each Eliminate removes at most one non-target.
        assert_eq!(a.count(BanCause::MutualEliminate), 2);
    }

    #[test]
    fn duplicates_collapse() {
        let (keys, map) = roster(2);
        let m = accuse(&keys, 0, 1);
        assert_eq!(sorted_accusations([&m, &m], &map).len(), 1);
    }
}
