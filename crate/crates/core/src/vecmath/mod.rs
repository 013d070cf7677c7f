//! Dense vectors, the n-way partition layout and seeded random streams.

mod layout;
mod stream;
mod ziggurat;

use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::math;

pub use layout::{merge, split, PartitionLayout};
pub use stream::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum VecError {
    #[error("dimension {d} is smaller than part count {n}")]
    DimensionTooSmall { d: usize, n: usize },
    #[error("part count must be at least 1")]
    NoParts,
    #[error("part {index} has length {got}, layout expects {expected}")]
    Layout { index: usize, expected: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// A model-sized vector of `f64`. Gradients, aggregates and the model state
/// all use this type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn zeros(d: usize) -> Self {
        Self(alloc::vec![0.0; d])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += c * b;
        }
    }
}

impl Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradientVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for GradientVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for GradientVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for GradientVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl FromIterator<f64> for GradientVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Left-to-right dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Left-to-right Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    math::sqrt(a.iter().fold(0.0, |acc, x| acc + x * x))
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, x| acc + x * x)
}

/// `‖a − b‖` without allocating.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    math::sqrt(a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let t = x - y;
        acc + t * t
    }))
}

pub fn sub(a: &[f64], b: &[f64]) -> GradientVector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Arithmetic mean of equal-length rows, summed in input order.
pub fn mean<R: AsRef<[f64]>>(rows: &[R]) -> Option<GradientVector> {
    let first = rows.first()?.as_ref();
    let mut acc = GradientVector::zeros(first.len());
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r.as_ref()) {
            *a += x;
        }
    }
    acc.scale(1.0 / rows.len() as f64);
    Some(acc)
}

/// Standard-normal fill followed by per-partition normalization, so each
/// slice `z[j]` is uniform on its unit sphere.
pub fn random_unit_direction(seed: u64, layout: &PartitionLayout) -> GradientVector {
    let mut stream = SeededStream::new(seed);
    let mut z: GradientVector = (0..layout.d()).map(|_| stream.next_normal()).collect();
    for j in 0..layout.n() {
        let part = &mut z[layout.range(j)];
        let nrm = norm(part);
        if nrm > 0.0 {
            part.iter_mut().for_each(|v| *v /= nrm);
        } else {
            // Measure-zero event; fall back to the first axis.
            part[0] = 1.0;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn unit_direction_is_deterministic_and_normalized() {
        let layout = PartitionLayout::new(1000, 7).unwrap();
        let a = random_unit_direction(42, &layout);
        let b = random_unit_direction(42, &layout);
        assert_eq!(a, b);
        for j in 0..layout.n() {
            assert!((norm(&a[layout.range(j)]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_seeds_give_nearly_orthogonal_directions() {
        let layout = PartitionLayout::new(512, 1).unwrap();
        for t in 0..100u64 {
            let a = random_unit_direction(2 * t, &layout);
            let b = random_unit_direction(2 * t + 1, &layout);
            assert!(dot(&a, &b).abs() < 0.2);
        }
    }

    #[test]
    fn degenerate_part_of_size_one_is_plus_or_minus_one() {
        let layout = PartitionLayout::new(5, 5).unwrap();
        let z = random_unit_direction(9, &layout);
        assert!(z.iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn mean_and_norm() {
        let m = mean(&[vec![0.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(&m[..], &[1.0, 3.0]);
        assert_eq!(norm(&[3.0, 4.0]), 5.0);
        assert!(mean::<Vec<f64>>(&[]).is_none());
    }

    proptest::proptest! {
        #[test]
        fn unit_direction_parts_have_unit_norm(seed in proptest::num::u64::ANY, d in 1usize..300, n in 1usize..16) {
            proptest::prop_assume!(n <= d);
            let layout = PartitionLayout::new(d, n).unwrap();
            let a = random_unit_direction(seed, &layout);
            proptest::prop_assert_eq!(&a, &random_unit_direction(seed, &layout));
            for j in 0..layout.n() {
                proptest::prop_assert!((norm(&a[layout.range(j)]) - 1.0).abs() < 1e-12);
            }
        }
    }
}
