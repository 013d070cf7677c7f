use core::fmt;

use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};

use super::{hash, Encoder, HashMode};
use crate::crypto::canonical::tag;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

super::hex::serde_as_hex!(PublicKey, 32);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({:02x}{:02x}{:02x}{:02x}..)", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

super::hex::serde_as_hex!(Signature, 64);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

#[derive(Clone)]
pub struct KeyPair {
    mode: HashMode,
    public: PublicKey,
    signing: Option<SigningKey>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

fn fast_tag(mode: HashMode, public: &PublicKey, msg: &[u8]) -> [u8; 64] {
    let d = hash(mode, &Encoder::new(tag::SIGNED).raw(&public.0).bytes(msg).finish());
    let mut out = [0u8; 64];
    out[..32].copy_from_slice(&d.0);
    out
}

impl KeyPair {
    /// Deterministic key from a 32-byte secret seed.
    pub fn from_secret(mode: HashMode, secret: [u8; 32]) -> Self {
        match mode {
            HashMode::Crypto => {
                let signing = SigningKey::from_bytes(&secret);
                let public = PublicKey(signing.verifying_key().to_bytes());
                Self { mode, public, signing: Some(signing) }
            }
            HashMode::FastSim => {
                let public = PublicKey(hash(mode, &Encoder::new(tag::PUBKEY).raw(&secret).finish()).0);
                Self { mode, public, signing: None }
            }
        }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn mode(&self) -> HashMode {
        self.mode
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        match &self.signing {
            Some(k) => Signature(k.sign(msg).to_bytes()),
            None => Signature(fast_tag(self.mode, &self.public, msg)),
        }
    }
}

impl PublicKey {
    pub fn verify(&self, mode: HashMode, msg: &[u8], sig: &Signature) -> bool {
        match mode {
            HashMode::Crypto => VerifyingKey::from_bytes(&self.0)
                .map(|vk| vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&sig.0)).is_ok())
                .unwrap_or(false),
            HashMode::FastSim => fast_tag(mode, self, msg) == sig.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeededStream;
    use alloc::vec::Vec;

    fn random_bytes(s: &mut SeededStream, n: usize) -> Vec<u8> {
        (0..n).map(|_| s.next_u64() as u8).collect()
    }

    #[test]
    fn round_trip_and_bit_flips() {
        for mode in [HashMode::Crypto, HashMode::FastSim] {
            let mut s = SeededStream::new(1);
            let kp = KeyPair::from_secret(mode, [7u8; 32]);
            for _ in 0..1000 {
                let len = 1 + s.next_below(64) as usize;
                let mut msg = random_bytes(&mut s, len);
                let sig = kp.sign(&msg);
                assert!(kp.public().verify(mode, &msg, &sig));
                let bit = s.next_below(8 * len as u64) as usize;
                msg[bit / 8] ^= 1 << (bit % 8);
                assert!(!kp.public().verify(mode, &msg, &sig));
            }
        }
    }

    #[test]
    fn corrupted_signature_fails() {
        let kp = KeyPair::from_secret(HashMode::Crypto, [3u8; 32]);
        let mut sig = kp.sign(b"hello");
        sig.0[10] ^= 0x04;
        assert!(!kp.public().verify(HashMode::Crypto, b"hello", &sig));
    }

    #[test]
    fn other_key_fails() {
        let a = KeyPair::from_secret(HashMode::Crypto, [1u8; 32]);
        let b = KeyPair::from_secret(HashMode::Crypto, [2u8; 32]);
        assert!(!b.public().verify(HashMode::Crypto, b"m", &a.sign(b"m")));
    }

    proptest::proptest! {
        #[test]
        fn any_bit_flip_breaks_signature(msg in proptest::collection::vec(proptest::num::u8::ANY, 1..256), secret in proptest::array::uniform32(proptest::num::u8::ANY), bit in proptest::num::usize::ANY, crypto in proptest::bool::ANY) {
            let mode = if crypto { HashMode::Crypto } else { HashMode::FastSim };
            let kp = KeyPair::from_secret(mode, secret);
            let sig = kp.sign(&msg);
            proptest::prop_assert!(kp.public().verify(mode, &msg, &sig));
            let mut bad = msg.clone();
            let bit = bit % (8 * bad.len());
            bad[bit / 8] ^= 1 << (bit % 8);
            proptest::prop_assert!(!kp.public().verify(mode, &bad, &sig));
        }
    }
}
