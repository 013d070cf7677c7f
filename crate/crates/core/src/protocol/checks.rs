//! Inner-product checksums, norms and Verification 3 flags.

use crate::math;
use crate::vecmath::{dot, norm};

/// What a contributor reports for one partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartMetadata {
    pub norm: f64,
    pub checksum: f64,
    pub flag: bool,
}

impl PartMetadata {
    /// Bitwise equality; every party evaluates the same expression.
    pub fn same_bits(&self, norm: f64, checksum: f64, flag: bool) -> bool {
        self.norm.to_bits() == norm.to_bits() && self.checksum.to_bits() == checksum.to_bits() && self.flag == flag
    }
}

/// `norm = ‖g − ĝ‖`, `s = ⟨z, (g − ĝ)·min{1, τ/‖g − ĝ‖}⟩`, `flag = norm > Δ_max`.
pub fn part_metadata(g: &[f64], agg: &[f64], z: &[f64], tau: f64, delta_max: f64) -> PartMetadata {
    let diff: alloc::vec::Vec<f64> = g.iter().zip(agg).map(|(a, b)| a - b).collect();
    let n = norm(&diff);
    let w = if n > tau { tau / n } else { 1.0 };
    let clipped: alloc::vec::Vec<f64> = diff.iter().map(|v| v * w).collect();
    PartMetadata { norm: n, checksum: dot(z, &clipped), flag: n > delta_max }
}

/// Per-contributor tolerance `ε_chk` for `|Σ s| ≤ n·ε_chk`, tied to the
/// CenteredClip stopping tolerance so converged honest aggregates pass.
pub fn eps_chk(part_len: usize, clip_tol: f64) -> f64 {
    clip_tol * math::sqrt(part_len as f64)
}

pub fn checksum_sum_ok(sum: f64, contributors: usize, eps: f64) -> bool {
    math::abs(sum) <= contributors as f64 * eps
}

/// Verification 3 fires when more than half of the step's workers flag.
pub fn verification3_fires(flags: usize, workers: usize) -> bool {
    2 * flags > workers
}
