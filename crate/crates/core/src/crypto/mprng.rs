//! Commit-reveal beacon: each participant commits to `H(i ‖ x_i ‖ s_i)`,
//! reveals `(x_i, s_i)` once every commitment is in, and the output is the
//! XOR of all `x_i`. A bad or missing reveal aborts the session; the caller
//! bans the offenders and restarts with fresh values.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::{hash, tag, Digest, Encoder, HashMode};
use crate::protocol::PeerId;

pub const MPRNG_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MprngPhase {
    Commit,
    Reveal,
    Done,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MprngError {
    #[error("operation not allowed in phase {0:?}")]
    WrongPhase(MprngPhase),
    #[error("peer {0} is not a participant")]
    NotParticipant(PeerId),
    #[error("peer {0} committed twice")]
    DuplicateCommit(PeerId),
    #[error("peer {0} revealed a value that does not match its commitment")]
    CommitmentMismatch(PeerId),
    #[error("peers {0:?} did not reveal before the deadline")]
    MissingReveal(Vec<PeerId>),
}

pub fn commitment(mode: HashMode, peer: PeerId, x: &[u8; MPRNG_BYTES], salt: &[u8; 32]) -> Digest {
    hash(mode, &Encoder::new(tag::MPRNG_COMMIT).u64(peer.0 as u64).raw(x).raw(salt).finish())
}

/// Purpose-specific sub-seed `H(output ‖ tag)`.
pub fn derive(mode: HashMode, output: &[u8; MPRNG_BYTES], purpose: &[u8]) -> Digest {
    hash(mode, &Encoder::new(tag::DERIVE).raw(output).bytes(purpose).finish())
}

pub fn derive_seed(mode: HashMode, output: &[u8; MPRNG_BYTES], purpose: &[u8]) -> u64 {
    derive(mode, output, purpose).to_seed()
}

#[derive(Debug, Clone)]
pub struct MprngSession {
    mode: HashMode,
    participants: BTreeSet<PeerId>,
    phase: MprngPhase,
    commitments: BTreeMap<PeerId, Digest>,
    reveals: BTreeMap<PeerId, [u8; MPRNG_BYTES]>,
    offenders: BTreeSet<PeerId>,
    output: Option<[u8; MPRNG_BYTES]>,
}

impl MprngSession {
    pub fn new(mode: HashMode, participants: impl IntoIterator<Item = PeerId>) -> Self {
        Self {
            mode,
            participants: participants.into_iter().collect(),
            phase: MprngPhase::Commit,
            commitments: BTreeMap::new(),
            reveals: BTreeMap::new(),
            offenders: BTreeSet::new(),
            output: None,
        }
    }

    pub fn phase(&self) -> MprngPhase {
        self.phase
    }

    pub fn participants(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.participants.iter().copied()
    }

    /// Peers caught misbehaving in this session.
    pub fn offenders(&self) -> &BTreeSet<PeerId> {
        &self.offenders
    }

    pub fn commitment_of(&self, peer: PeerId) -> Option<Digest> {
        self.commitments.get(&peer).copied()
    }

    pub fn commit(&mut self, peer: PeerId, c: Digest) -> Result<(), MprngError> {
        if !self.participants.contains(&peer) {
            return Err(MprngError::NotParticipant(peer));
        }
        if self.commitments.contains_key(&peer) {
            self.offenders.insert(peer);
            return Err(MprngError::DuplicateCommit(peer));
        }
        if self.phase != MprngPhase::Commit {
            return Err(MprngError::WrongPhase(self.phase));
        }
        self.commitments.insert(peer, c);
        if self.commitments.len() == self.participants.len() {
            self.phase = MprngPhase::Reveal;
        }
        Ok(())
    }

    /// Reveals keep being checked after an abort so every offender of the
    /// round is identified at once.
    pub fn reveal(&mut self, peer: PeerId, x: [u8; MPRNG_BYTES], salt: [u8; 32]) -> Result<(), MprngError> {
        if !matches!(self.phase, MprngPhase::Reveal | MprngPhase::Aborted) {
            return Err(MprngError::WrongPhase(self.phase));
        }
        let Some(&c) = self.commitments.get(&peer) else {
            return Err(MprngError::NotParticipant(peer));
        };
        if self.reveals.contains_key(&peer) {
            return Ok(());
        }
        if commitment(self.mode, peer, &x, &salt) != c {
            self.offenders.insert(peer);
            self.phase = MprngPhase::Aborted;
            return Err(MprngError::CommitmentMismatch(peer));
        }
        self.reveals.insert(peer, x);
        if self.phase == MprngPhase::Reveal && self.reveals.len() == self.participants.len() {
            let mut out = [0u8; MPRNG_BYTES];
            for x in self.reveals.values() {
                out.iter_mut().zip(x).for_each(|(o, b)| *o ^= b);
            }
            self.output = Some(out);
            self.phase = MprngPhase::Done;
        }
        Ok(())
    }

    /// Deadline reached: anyone who has not committed or revealed is an
    /// offender.
    pub fn close(&mut self) -> Result<(), MprngError> {
        if self.phase == MprngPhase::Done {
            return Ok(());
        }
        let missing: Vec<PeerId> = match self.phase {
            MprngPhase::Commit => self.participants.iter().filter(|p| !self.commitments.contains_key(p)).copied().collect(),
            _ => self.participants.iter().filter(|p| !self.reveals.contains_key(p) && !self.offenders.contains(p)).copied().collect(),
        };
        self.offenders.extend(missing.iter().copied());
        self.phase = MprngPhase::Aborted;
        if missing.is_empty() {
            Ok(())
        } else {
            Err(MprngError::MissingReveal(missing))
        }
    }

    /// Fresh session over the participants that did not misbehave.
    pub fn restart(&self) -> Self {
        Self::new(self.mode, self.participants.iter().filter(|p| !self.offenders.contains(p)).copied())
    }

    pub fn output(&self) -> Option<[u8; MPRNG_BYTES]> {
        self.output
    }

    pub fn derive(&self, purpose: &[u8]) -> Result<u64, MprngError> {
        self.output
            .map(|o| derive_seed(self.mode, &o, purpose))
            .ok_or(MprngError::WrongPhase(self.phase))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: HashMode = HashMode::Crypto;

    fn val(b: u8) -> [u8; 32] {
        let mut x = [0u8; 32];
        x[0] = b;
        x
    }

    fn session(xs: &[u8]) -> MprngSession {
        let mut s = MprngSession::new(M, (0..xs.len() as u32).map(PeerId));
        for (i, &x) in xs.iter().enumerate() {
            let p = PeerId(i as u32);
            s.commit(p, commitment(M, p, &val(x), &val(100 + x))).unwrap();
        }
        s
    }

    #[test]
    fn xor_of_three() {
        let xs = [0b1010, 0b0110, 0b0011];
        let mut s = session(&xs);
        assert_eq!(s.phase(), MprngPhase::Reveal);
        for (i, &x) in xs.iter().enumerate() {
            s.reveal(PeerId(i as u32), val(x), val(100 + x)).unwrap();
        }
        assert_eq!(s.phase(), MprngPhase::Done);
        assert_eq!(s.output().unwrap()[0], 0b1111);
    }

    #[test]
    fn single_peer_output_is_its_value() {
        let mut s = session(&[42]);
        s.reveal(PeerId(0), val(42), val(142)).unwrap();
        assert_eq!(s.output(), Some(val(42)));
    }

    #[test]
    fn duplicate_and_late_commit() {
        let mut s = MprngSession::new(M, [PeerId(0), PeerId(1)]);
        let c = commitment(M, PeerId(0), &val(1), &val(2));
        s.commit(PeerId(0), c).unwrap();
        assert_eq!(s.commit(PeerId(0), c), Err(MprngError::DuplicateCommit(PeerId(0))));
        assert!(s.offenders().contains(&PeerId(0)));

        let mut s = session(&[1, 2]);
        assert!(s.commit(PeerId(5), Digest::default()).is_err());
        assert!(matches!(s.commit(PeerId(0), Digest::default()), Err(MprngError::DuplicateCommit(_))));
    }

    #[test]
    fn mismatched_reveal_aborts_and_restart_drops_offender() {
        let mut s = session(&[1, 2, 3]);
        s.reveal(PeerId(0), val(1), val(101)).unwrap();
        assert_eq!(s.reveal(PeerId(1), val(9), val(102)), Err(MprngError::CommitmentMismatch(PeerId(1))));
        assert_eq!(s.phase(), MprngPhase::Aborted);
        s.reveal(PeerId(2), val(3), val(103)).unwrap();
        assert_eq!(s.output(), None);
        assert!(s.derive(b"z").is_err());
        let r = s.restart();
        assert_eq!(r.participants().collect::<Vec<_>>(), [PeerId(0), PeerId(2)]);
        assert_eq!(r.phase(), MprngPhase::Commit);
    }

    #[test]
    fn missing_reveal_is_offence() {
        let mut s = session(&[1, 2]);
        s.reveal(PeerId(0), val(1), val(101)).unwrap();
        assert_eq!(s.close(), Err(MprngError::MissingReveal([PeerId(1)].into())));
        assert_eq!(s.restart().participants().count(), 1);
    }

    #[test]
    fn reveal_before_all_commitments_rejected() {
        let mut s = MprngSession::new(M, [PeerId(0), PeerId(1)]);
        s.commit(PeerId(0), commitment(M, PeerId(0), &val(1), &val(2))).unwrap();
        assert_eq!(s.reveal(PeerId(0), val(1), val(2)), Err(MprngError::WrongPhase(MprngPhase::Commit)));
    }

    #[test]
    fn derive_separates_purposes() {
        let o = val(5);
        assert_ne!(derive_seed(M, &o, b"z"), derive_seed(M, &o, b"validators"));
        assert_eq!(derive_seed(M, &o, b"z"), derive_seed(M, &o, b"z"));
    }
}
