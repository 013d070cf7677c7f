//! Signed protocol messages and their canonical byte layout.
//!
//! Header: `tag(0x20 + kind) ‖ step:u64 ‖ sender:u64`, followed by the
//! payload fields below (u64 little endian, reals as binary64 LE, digests as
//! 32 raw bytes, length prefixes as u64):
//!
//! | kind       | payload                                        |
//! |------------|------------------------------------------------|
//! | PartHash   | full digest, len, part digests                 |
//! | Part       | partition, reals                               |
//! | AggHash    | partition, digest                              |
//! | AggPart    | partition, reals                               |
//! | Checksum   | reals (one per partition)                      |
//! | Norm       | reals (one per partition)                      |
//! | CheckFlag  | len, one byte per partition                    |
//! | Commit     | round, digest                                  |
//! | Reveal     | round, 32-byte value, 32-byte salt             |
//! | Accuse     | target, referenced step, reason, partition     |
//! | Eliminate  | target, reason, partition                      |
//!
//! On the wire a message is its canonical bytes followed by a 64-byte
//! signature over the digest of those bytes.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::PeerId;
use crate::crypto::{hash, tag, Digest, Encoder, HashMode, KeyPair, PublicKey, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    PartHash,
    Part,
    AggHash,
    AggPart,
    Checksum,
    Norm,
    CheckFlag,
    Commit,
    Reveal,
    Accuse,
    Eliminate,
}

impl MessageKind {
    const ALL: [MessageKind; 11] = [
        Self::PartHash,
        Self::Part,
        Self::AggHash,
        Self::AggPart,
        Self::Checksum,
        Self::Norm,
        Self::CheckFlag,
        Self::Commit,
        Self::Reveal,
        Self::Accuse,
        Self::Eliminate,
    ];

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    /// Point-to-point kinds; everything else goes over the broadcast channel.
    pub fn is_p2p(self) -> bool {
        matches!(self, Self::Part | Self::AggPart)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuseReason {
    /// A validator's replay of the target's gradient disagrees with what the
    /// target committed or reported.
    Gradient,
    /// An aggregator found the target's norm or checksum for its partition
    /// inconsistent with the part the target sent.
    Metadata,
    /// The checksums of a partition do not sum to zero.
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EliminateReason {
    PartMismatch,
    PartMissing,
    AggMismatch,
    AggMissing,
}

impl AccuseReason {
    fn code(self) -> u8 {
        self as u8
    }
    fn from_code(c: u8) -> Option<Self> {
        [Self::Gradient, Self::Metadata, Self::Aggregate].get(c as usize).copied()
    }
}

impl EliminateReason {
    fn code(self) -> u8 {
        self as u8
    }
    fn from_code(c: u8) -> Option<Self> {
        [Self::PartMismatch, Self::PartMissing, Self::AggMismatch, Self::AggMissing].get(c as usize).copied()
    }
    /// Raised by an aggregator against a contributor.
    pub fn about_part(self) -> bool {
        matches!(self, Self::PartMismatch | Self::PartMissing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    PartHash { full: Digest, parts: Vec<Digest> },
    Part { partition: u32, values: Vec<f64> },
    AggHash { partition: u32, digest: Digest },
    AggPart { partition: u32, values: Vec<f64> },
    Checksum { values: Vec<f64> },
    Norm { values: Vec<f64> },
    CheckFlag { flags: Vec<bool> },
    Commit { round: u32, digest: Digest },
    Reveal { round: u32, value: [u8; 32], salt: [u8; 32] },
    Accuse { target: PeerId, step: u64, reason: AccuseReason, partition: u32 },
    Eliminate { target: PeerId, reason: EliminateReason, partition: u32 },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Self::PartHash { .. } => MessageKind::PartHash,
            Self::Part { .. } => MessageKind::Part,
            Self::AggHash { .. } => MessageKind::AggHash,
            Self::AggPart { .. } => MessageKind::AggPart,
            Self::Checksum { .. } => MessageKind::Checksum,
            Self::Norm { .. } => MessageKind::Norm,
            Self::CheckFlag { .. } => MessageKind::CheckFlag,
            Self::Commit { .. } => MessageKind::Commit,
            Self::Reveal { .. } => MessageKind::Reveal,
            Self::Accuse { .. } => MessageKind::Accuse,
            Self::Eliminate { .. } => MessageKind::Eliminate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub step: u64,
    pub sender: PeerId,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("invalid field value")]
    Invalid,
    #[error("trailing bytes after message")]
    Trailing,
}

impl Message {
    pub fn new(step: u64, sender: PeerId, payload: Payload) -> Self {
        Self { step, sender, payload }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(tag::MESSAGE_BASE + self.kind().code());
        e.u64(self.step).u64(self.sender.0 as u64);
        match &self.payload {
            Payload::PartHash { full, parts } => {
                e.raw(&full.0).len(parts.len());
                parts.iter().for_each(|p| {
                    e.raw(&p.0);
                });
            }
            Payload::Part { partition, values } | Payload::AggPart { partition, values } => {
                e.u64(*partition as u64).reals(values);
            }
            Payload::AggHash { partition, digest } => {
                e.u64(*partition as u64).raw(&digest.0);
            }
            Payload::Checksum { values } | Payload::Norm { values } => {
                e.reals(values);
            }
            Payload::CheckFlag { flags } => {
                e.len(flags.len());
                flags.iter().for_each(|f| {
                    e.u8(u8::from(*f));
                });
            }
            Payload::Commit { round, digest } => {
                e.u64(*round as u64).raw(&digest.0);
            }
            Payload::Reveal { round, value, salt } => {
                e.u64(*round as u64).raw(value).raw(salt);
            }
            Payload::Accuse { target, step, reason, partition } => {
                e.u64(target.0 as u64).u64(*step).u8(reason.code()).u64(*partition as u64);
            }
            Payload::Eliminate { target, reason, partition } => {
                e.u64(target.0 as u64).u8(reason.code()).u64(*partition as u64);
            }
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader { b: bytes };
        let t = r.u8()?;
        let kind = t
            .checked_sub(tag::MESSAGE_BASE)
            .and_then(MessageKind::from_code)
            .ok_or(DecodeError::UnknownTag(t))?;
        let step = r.u64()?;
        let sender = PeerId(r.u32()?);
        let payload = match kind {
            MessageKind::PartHash => {
                let full = r.digest()?;
                let n = r.len(32)?;
                Payload::PartHash { full, parts: (0..n).map(|_| r.digest()).collect::<Result<_, _>>()? }
            }
            MessageKind::Part => Payload::Part { partition: r.u32()?, values: r.reals()? },
            MessageKind::AggPart => Payload::AggPart { partition: r.u32()?, values: r.reals()? },
            MessageKind::AggHash => Payload::AggHash { partition: r.u32()?, digest: r.digest()? },
            MessageKind::Checksum => Payload::Checksum { values: r.reals()? },
            MessageKind::Norm => Payload::Norm { values: r.reals()? },
            MessageKind::CheckFlag => {
                let n = r.len(1)?;
                let flags = (0..n)
                    .map(|_| match r.u8()? {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => Err(DecodeError::Invalid),
                    })
                    .collect::<Result<_, _>>()?;
                Payload::CheckFlag { flags }
            }
            MessageKind::Commit => Payload::Commit { round: r.u32()?, digest: r.digest()? },
            MessageKind::Reveal => Payload::Reveal { round: r.u32()?, value: r.array()?, salt: r.array()? },
            MessageKind::Accuse => Payload::Accuse {
                target: PeerId(r.u32()?),
                step: r.u64()?,
                reason: AccuseReason::from_code(r.u8()?).ok_or(DecodeError::Invalid)?,
                partition: r.u32()?,
            },
            MessageKind::Eliminate => Payload::Eliminate {
                target: PeerId(r.u32()?),
                reason: EliminateReason::from_code(r.u8()?).ok_or(DecodeError::Invalid)?,
                partition: r.u32()?,
            },
        };
        if !r.b.is_empty() {
            return Err(DecodeError::Trailing);
        }
        Ok(Self { step, sender, payload })
    }

    /// Two messages with equal keys but different bytes contradict each
    /// other. Point-to-point payloads and accusations have no key.
    pub fn equivocation_key(&self) -> Option<(u64, PeerId, MessageKind, u32)> {
        let slot = match &self.payload {
            Payload::Part { .. } | Payload::AggPart { .. } | Payload::Accuse { .. } | Payload::Eliminate { .. } => return None,
            Payload::Commit { round, .. } | Payload::Reveal { round, .. } => *round,
            _ => 0,
        };
        Some((self.step, self.sender, self.kind(), slot))
    }
}

struct Reader<'a> {
    b: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], DecodeError> {
        if self.b.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (h, t) = self.b.split_at(n);
        self.b = t;
        Ok(h)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        u32::try_from(self.u64()?).map_err(|_| DecodeError::Invalid)
    }
    fn len(&mut self, item: usize) -> Result<usize, DecodeError> {
        let n = usize::try_from(self.u64()?).map_err(|_| DecodeError::Invalid)?;
        if n.checked_mul(item).is_none_or(|t| t > self.b.len()) {
            return Err(DecodeError::Truncated);
        }
        Ok(n)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn digest(&mut self) -> Result<Digest, DecodeError> {
        Ok(Digest(self.array()?))
    }
    fn reals(&mut self) -> Result<Vec<f64>, DecodeError> {
        let n = self.len(8)?;
        (0..n).map(|_| Ok(f64::from_le_bytes(self.array()?))).collect()
    }
}

/// A message with its sender's signature and cached digest.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMessage {
    pub message: Message,
    pub signature: Signature,
    digest: Digest,
    wire_len: usize,
}

impl SignedMessage {
    pub fn sign(mode: HashMode, message: Message, key: &KeyPair) -> Self {
        let bytes = message.canonical_bytes();
        let digest = hash(mode, &bytes);
        let signature = key.sign(&digest.0);
        Self { message, signature, digest, wire_len: bytes.len() + 64 }
    }

    /// Attach a signature without signing (used by forgers in tests and by
    /// trace decoding).
    pub fn with_signature(mode: HashMode, message: Message, signature: Signature) -> Self {
        let bytes = message.canonical_bytes();
        let digest = hash(mode, &bytes);
        Self { message, signature, digest, wire_len: bytes.len() + 64 }
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn wire_len(&self) -> usize {
        self.wire_len
    }

    pub fn verify(&self, mode: HashMode, sender_key: &PublicKey) -> bool {
        sender_key.verify(mode, &self.digest.0, &self.signature)
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut b = self.message.canonical_bytes();
        b.extend_from_slice(&self.signature.0);
        b
    }

    pub fn from_wire(mode: HashMode, bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() < 64 {
            return Err(DecodeError::Truncated);
        }
        let (body, sig) = bytes.split_at(bytes.len() - 64);
        let message = Message::decode(body)?;
        Ok(Self::with_signature(mode, message, Signature(sig.try_into().unwrap())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn samples() -> Vec<Payload> {
        let d = Digest([3; 32]);
        vec![
            Payload::PartHash { full: d, parts: vec![d, Digest([4; 32])] },
            Payload::Part { partition: 2, values: vec![1.0, -0.5] },
            Payload::AggHash { partition: 1, digest: d },
            Payload::AggPart { partition: 1, values: vec![f64::MIN_POSITIVE] },
            Payload::Checksum { values: vec![0.25; 3] },
            Payload::Norm { values: vec![] },
            Payload::CheckFlag { flags: vec![true, false, true] },
            Payload::Commit { round: 1, digest: d },
            Payload::Reveal { round: 0, value: [9; 32], salt: [8; 32] },
            Payload::Accuse { target: PeerId(4), step: 7, reason: AccuseReason::Metadata, partition: 3 },
            Payload::Eliminate { target: PeerId(2), reason: EliminateReason::AggMissing, partition: 0 },
        ]
    }

    #[test]
    fn wire_round_trip_all_kinds() {
        let key = KeyPair::from_secret(HashMode::Crypto, [1; 32]);
        for p in samples() {
            let m = Message::new(5, PeerId(3), p);
            let s = SignedMessage::sign(HashMode::Crypto, m.clone(), &key);
            assert!(s.verify(HashMode::Crypto, &key.public()));
            let back = SignedMessage::from_wire(HashMode::Crypto, &s.to_wire()).unwrap();
            assert_eq!(back, s);
            assert_eq!(s.wire_len(), s.to_wire().len());
        }
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let key = KeyPair::from_secret(HashMode::FastSim, [1; 32]);
        for p in samples() {
            let s = SignedMessage::sign(HashMode::FastSim, Message::new(1, PeerId(0), p), &key);
            let wire = s.to_wire();
            for i in 0..wire.len() {
                let mut w = wire.clone();
                w[i] ^= 0x10;
                let ok = SignedMessage::from_wire(HashMode::FastSim, &w)
                    .map(|m| m.verify(HashMode::FastSim, &key.public()))
                    .unwrap_or(false);
                assert!(!ok, "flip at {i} undetected");
            }
        }
    }

    #[test]
    fn decode_rejects_garbage() {
        assert_eq!(Message::decode(&[]), Err(DecodeError::Truncated));
        assert_eq!(Message::decode(&[0x00]), Err(DecodeError::UnknownTag(0)));
        let mut b = Message::new(0, PeerId(0), Payload::Norm { values: vec![1.0] }).canonical_bytes();
        b.push(0);
        assert_eq!(Message::decode(&b), Err(DecodeError::Trailing));
    }

    #[test]
    fn equivocation_keys() {
        let a = Message::new(1, PeerId(2), Payload::Checksum { values: vec![1.0] });
        let b = Message::new(1, PeerId(2), Payload::Checksum { values: vec![2.0] });
        assert_eq!(a.equivocation_key(), b.equivocation_key());
        let p = Message::new(1, PeerId(2), Payload::Part { partition: 0, values: vec![] });
        assert_eq!(p.equivocation_key(), None);
    }
}
