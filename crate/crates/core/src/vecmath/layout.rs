use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use super::{GradientVector, VecError};

/// Split of `d` coordinates into `n` contiguous parts: the first `d mod n`
/// parts hold `⌈d/n⌉` coordinates, the rest `⌊d/n⌋`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionLayout {
    d: usize,
    offsets: Vec<usize>,
}

impl PartitionLayout {
    pub fn new(d: usize, n: usize) -> Result<Self, VecError> {
        if n == 0 {
            return Err(VecError::NoParts);
        }
        if d < n {
            return Err(VecError::DimensionTooSmall { d, n });
        }
        let (small, extra) = (d / n, d % n);
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut at = 0;
        for j in 0..n {
            at += small + usize::from(j < extra);
            offsets.push(at);
        }
        Ok(Self { d, offsets })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn range(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn part_len(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    pub fn sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.offsets.windows(2).map(|w| w[1] - w[0])
    }

    /// Borrow part `j` of `v`.
    pub fn part<'a>(&self, v: &'a [f64], j: usize) -> &'a [f64] {
        &v[self.range(j)]
    }
}

/// Views of `v` following the layout for `n` parts.
pub fn split(v: &[f64], n: usize) -> Result<Vec<&[f64]>, VecError> {
    let layout = PartitionLayout::new(v.len(), n)?;
    Ok((0..n).map(|j| layout.part(v, j)).collect())
}

/// Concatenate parts after checking they follow the layout of their total
/// length and count.
pub fn merge<P: AsRef<[f64]>>(parts: &[P]) -> Result<GradientVector, VecError> {
    let d = parts.iter().map(|p| p.as_ref().len()).sum();
    let layout = PartitionLayout::new(d, parts.len())?;
    for (index, (p, expected)) in parts.iter().zip(layout.sizes()).enumerate() {
        let got = p.as_ref().len();
        if got != expected {
            return Err(VecError::Layout { index, expected, got });
        }
    }
    let mut out = Vec::with_capacity(d);
    parts.iter().for_each(|p| out.extend_from_slice(p.as_ref()));
    Ok(GradientVector::from(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn sizes(d: usize, n: usize) -> Vec<usize> {
        PartitionLayout::new(d, n).unwrap().sizes().collect()
    }

    #[test]
    fn layout_examples() {
        assert_eq!(sizes(10, 3), [4, 3, 3]);
        assert_eq!(sizes(6, 6), [1; 6]);
        assert_eq!(sizes(7, 2), [4, 3]);
        assert_eq!(
            PartitionLayout::new(2, 3),
            Err(VecError::DimensionTooSmall { d: 2, n: 3 })
        );
    }

    #[test]
    fn merge_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(&merge(&split(&v, 2).unwrap()).unwrap()[..], &v);
        assert_eq!(merge::<Vec<f64>>(&[]), Err(VecError::NoParts));
        let swapped = [vec![0.0; 3], vec![0.0; 4]];
        assert!(matches!(merge(&swapped), Err(VecError::Layout { index: 0, .. })));
    }

    proptest! {
        #[test]
        fn split_merge_round_trip(d in 1usize..300, n_frac in 0.0f64..1.0, seed: u64) {
            let n = 1 + ((d - 1) as f64 * n_frac) as usize;
            let mut s = crate::SeededStream::new(seed);
            let v: Vec<f64> = (0..d).map(|_| s.next_normal()).collect();
            let parts = split(&v, n).unwrap();
            let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), d);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let back = merge(&parts).unwrap();
            prop_assert!(back.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
