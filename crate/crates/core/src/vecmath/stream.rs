use super::ziggurat;
use crate::math;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based SplitMix64. Draw `k` is `mix(seed + (k+1)·γ)`, so a stream
/// can be replayed from any `(seed, counter)` pair on any platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededStream {
    seed: u64,
    counter: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Seed from arbitrary bytes (the first 8 bytes, little endian, padded).
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        let k = bytes.len().min(8);
        buf[..k].copy_from_slice(&bytes[..k]);
        Self::new(u64::from_le_bytes(buf))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, bound) by rejection, unbiased.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        ziggurat::sample(self)
    }

    /// Exponential with rate 1.
    pub fn next_exp(&mut self) -> f64 {
        -math::ln(self.next_open01())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn equal_seeds_equal_draws() {
        let a: Vec<u64> = {
            let mut s = SeededStream::new(7);
            (0..10_000).map(|_| s.next_u64()).collect()
        };
        let mut s = SeededStream::new(7);
        assert!(a.iter().all(|&v| v == s.next_u64()));
    }

    #[test]
    fn splitmix_reference_values() {
        // Reference SplitMix64 from state 0.
        let mut s = SeededStream::new(0);
        assert_eq!(s.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(s.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn normal_moments() {
        let mut s = SeededStream::new(3);
        let n = 400_000;
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = s.next_normal();
            m1 += x;
            m2 += x * x;
            m4 += x * x * x * x;
        }
        let nf = n as f64;
        assert!((m1 / nf).abs() < 0.01);
        assert!((m2 / nf - 1.0).abs() < 0.01);
        assert!((m4 / nf - 3.0).abs() < 0.06);
    }

    #[test]
    fn normal_tail_frequency() {
        let mut s = SeededStream::new(11);
        let n = 2_000_000;
        let beyond = (0..n).filter(|_| s.next_normal().abs() > 3.0).count();
        // P(|Z| > 3) = 0.0026998
        let p = beyond as f64 / n as f64;
        assert!((p - 0.0026998).abs() < 0.0003, "{p}");
    }

    #[test]
    fn below_is_in_range() {
        let mut s = SeededStream::new(5);
        assert!((0..1000).all(|_| s.next_below(7) < 7));
    }
}
