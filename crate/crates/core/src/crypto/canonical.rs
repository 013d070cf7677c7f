//! Canonical byte encoding: a 1-byte type tag, lengths as u64 LE, reals as
//! IEEE-754 binary64 LE in index order. Every hash and signature in the
//! protocol is taken over these bytes.

use alloc::vec::Vec;

use crate::vecmath::GradientVector;

pub mod tag {
    pub const VECTOR: u8 = 0x01;
    pub const MPRNG_COMMIT: u8 = 0x02;
    pub const DERIVE: u8 = 0x03;
    pub const SIGNED: u8 = 0x04;
    pub const PUBKEY: u8 = 0x05;
    pub const SEED_CHAIN: u8 = 0x06;
    pub const RECORD: u8 = 0x07;
    /// Protocol messages use `MESSAGE_BASE + kind`.
    pub const MESSAGE_BASE: u8 = 0x20;
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(tag: u8) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.push(tag);
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn len(&mut self, n: usize) -> &mut Self {
        self.u64(n as u64)
    }

    /// Length-prefixed real vector.
    pub fn reals(&mut self, v: &[f64]) -> &mut Self {
        self.len(v.len());
        self.buf.reserve(8 * v.len());
        v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_le_bytes()));
        self
    }

    /// Length-prefixed raw bytes.
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.len(b.len());
        self.buf.extend_from_slice(b);
        self
    }

    /// Fixed-width bytes, no prefix.
    pub fn raw(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        core::mem::take(&mut self.buf)
    }
}

pub trait Canonical {
    fn canonical_bytes(&self) -> Vec<u8>;
}

impl Canonical for [f64] {
    fn canonical_bytes(&self) -> Vec<u8> {
        Encoder::new(tag::VECTOR).reals(self).finish()
    }
}

impl Canonical for GradientVector {
    fn canonical_bytes(&self) -> Vec<u8> {
        self[..].canonical_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_element_vector_layout() {
        let b = [1.0f64][..].canonical_bytes();
        assert_eq!(b[0], tag::VECTOR);
        assert_eq!(&b[1..9], &1u64.to_le_bytes());
        assert_eq!(&b[9..], &[0, 0, 0, 0, 0, 0, 0xF0, 0x3F]);
    }

    #[test]
    fn one_ulp_changes_bytes() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        assert_ne!([a][..].canonical_bytes(), [b][..].canonical_bytes());
        assert_eq!([a][..].canonical_bytes(), [a][..].canonical_bytes());
    }

    #[test]
    fn length_prefix_separates_concatenations() {
        let x = Encoder::new(0).reals(&[1.0]).reals(&[]).finish();
        let y = Encoder::new(0).reals(&[]).reals(&[1.0]).finish();
        assert_ne!(x, y);
    }
}
