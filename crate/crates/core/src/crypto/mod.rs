//! Hashing, signatures, canonical encoding and the commit-reveal beacon.
//!
//! Two backends sit behind [`HashMode`]. `Crypto` (the default) is SHA-256
//! with Ed25519. `FastSim` swaps in xxh3-128 and a keyed-hash tag for
//! Monte-Carlo runs; its "signatures" are forgeable by anyone holding the
//! public key and must never leave the simulator.

mod canonical;
mod mprng;
mod sign;

use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use xxhash_rust::xxh3::Xxh3;

pub mod hex;

pub use canonical::{tag, Canonical, Encoder};
pub use mprng::{commitment, derive, derive_seed, MprngError, MprngPhase, MprngSession, MPRNG_BYTES};
pub use sign::{KeyPair, PublicKey, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashMode {
    #[default]
    Crypto,
    FastSim,
}

/// 32-byte hash output. FastSim digests use the first 16 bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// First 8 bytes as a little-endian seed.
    pub fn to_seed(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.0[..8]);
        u64::from_le_bytes(b)
    }

    pub fn to_hex(&self) -> alloc::string::String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_into(s, &mut out).then_some(Self(out))
    }
}

hex::serde_as_hex!(Digest, 32);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Incremental hasher over either backend.
pub enum Hasher {
    Sha(Sha256),
    Fast(Xxh3),
}

impl Hasher {
    pub fn new(mode: HashMode) -> Self {
        match mode {
            HashMode::Crypto => Self::Sha(Sha256::new()),
            HashMode::FastSim => Self::Fast(Xxh3::new()),
        }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        match self {
            Self::Sha(h) => h.update(bytes),
            Self::Fast(h) => h.update(bytes),
        }
    }

    pub fn finish(self) -> Digest {
        let mut out = [0u8; 32];
        match self {
            Self::Sha(h) => out.copy_from_slice(&h.finalize()),
            Self::Fast(h) => out[..16].copy_from_slice(&h.digest128().to_le_bytes()),
        }
        Digest(out)
    }
}

pub fn hash(mode: HashMode, bytes: &[u8]) -> Digest {
    let mut h = Hasher::new(mode);
    h.update(bytes);
    h.finish()
}

/// Hash of a value's canonical encoding.
pub fn hash_value<T: Canonical + ?Sized>(mode: HashMode, value: &T) -> Digest {
    hash(mode, &value.canonical_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_answer() {
        let d = hash(HashMode::Crypto, b"abc");
        assert_eq!(
            d.to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hex_round_trip() {
        let d = hash(HashMode::FastSim, b"x");
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest::from_hex("zz"), None);
    }

    #[test]
    fn modes_differ() {
        assert_ne!(hash(HashMode::Crypto, b"x"), hash(HashMode::FastSim, b"x"));
    }
}
