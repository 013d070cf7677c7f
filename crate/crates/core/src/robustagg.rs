//! CenteredClip and the baseline aggregators.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::vecmath::{self, distance, GradientVector};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum AggError {
    #[error("no inputs")]
    Empty,
    #[error("input {index} has length {got}, expected {expected}")]
    Ragged { index: usize, expected: usize, got: usize },
    #[error("aggregate is not finite")]
    NonFinite,
    #[error("clip schedule needs 0 < delta < 0.5, got {0}")]
    BadDelta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ClipMode {
    FixedTau { tau: f64 },
    /// Radius `τ_l` follows the `(δ, σ, B²)` recursion.
    Schedule { delta: f64, sigma: f64, b0_sq: f64 },
    /// Exact mean.
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    #[serde(flatten)]
    pub mode: ClipMode,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iters() -> usize {
    1000
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self::infinite()
    }
}

impl ClipConfig {
    pub fn infinite() -> Self {
        Self { mode: ClipMode::Infinite, tol: default_tol(), max_iters: default_max_iters() }
    }

    pub fn fixed(tau: f64) -> Self {
        Self { mode: ClipMode::FixedTau { tau }, ..Self::infinite() }
    }

    /// A zero-δ schedule degenerates to the exact mean.
    pub fn schedule(delta: f64, sigma: f64, b0_sq: f64) -> Self {
        if delta == 0.0 {
            return Self::infinite();
        }
        Self { mode: ClipMode::Schedule { delta, sigma, b0_sq }, ..Self::infinite() }
    }

    pub fn with_tol(mut self, tol: f64, max_iters: usize) -> Self {
        self.tol = tol;
        self.max_iters = max_iters;
        self
    }

    /// The radius in the fixed-point equation the output satisfies. For a
    /// schedule this is its limit, which the iteration switches to once
    /// reached.
    pub fn final_tau(&self) -> f64 {
        match self.mode {
            ClipMode::FixedTau { tau } => tau,
            ClipMode::Infinite => f64::INFINITY,
            ClipMode::Schedule { delta, sigma, .. } => {
                if delta == 0.0 {
                    return f64::INFINITY;
                }
                let b_sq = 5.0 * sigma * sigma / (1.0 - 6.45 * delta);
                tau_of(delta, sigma, b_sq)
            }
        }
    }

    pub fn validate(&self) -> Result<(), AggError> {
        match self.mode {
            ClipMode::Schedule { delta, .. } if !(delta > 0.0 && delta < 0.5) => Err(AggError::BadDelta(delta)),
            _ => Ok(()),
        }
    }
}

fn tau_of(delta: f64, sigma: f64, b_sq: f64) -> f64 {
    4.0 * math::sqrt((1.0 - delta) * (b_sq / 3.0 + sigma * sigma) / (math::sqrt(3.0) * delta))
}

/// One step of the radius recursion: returns `(τ_l, B²_{l+1})`.
pub fn tau_schedule_step(delta: f64, sigma: f64, b_sq: f64) -> Result<(f64, f64), AggError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(AggError::BadDelta(delta));
    }
    Ok((tau_of(delta, sigma, b_sq), 6.45 * delta * b_sq + 5.0 * sigma * sigma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipOutput {
    pub v: GradientVector,
    pub iters: usize,
    pub residual: f64,
}

fn check_shape<R: AsRef<[f64]>>(inputs: &[R]) -> Result<usize, AggError> {
    let d = inputs.first().ok_or(AggError::Empty)?.as_ref().len();
    for (index, r) in inputs.iter().enumerate() {
        let got = r.as_ref().len();
        if got != d {
            return Err(AggError::Ragged { index, expected: d, got });
        }
    }
    Ok(d)
}

/// `(1/n) Σ (x_i − v)·min{1, τ/‖x_i − v‖}` written into `out`.
pub fn clip_step<R: AsRef<[f64]>>(inputs: &[R], v: &[f64], tau: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for x in inputs {
        let x = x.as_ref();
        let dist = distance(x, v);
        let w = if dist > tau { tau / dist } else { 1.0 };
        for ((o, a), b) in out.iter_mut().zip(x).zip(v) {
            *o += (a - b) * w;
        }
    }
    let inv = 1.0 / inputs.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Fixed-point residual `‖Σ(x_i − v)min{1, τ/‖x_i − v‖}‖ / n`.
pub fn residual<R: AsRef<[f64]>>(inputs: &[R], v: &[f64], tau: f64) -> f64 {
    let mut step = alloc::vec![0.0; v.len()];
    clip_step(inputs, v, tau, &mut step);
    vecmath::norm(&step)
}

/// CenteredClip from `v0` (coordinate median when `None`).
pub fn centered_clip<R: AsRef<[f64]>>(
    inputs: &[R],
    cfg: &ClipConfig,
    v0: Option<&[f64]>,
) -> Result<ClipOutput, AggError> {
    let d = check_shape(inputs)?;
    cfg.validate()?;
    if let ClipMode::Infinite = cfg.mode {
        let v = vecmath::mean(inputs).ok_or(AggError::Empty)?;
        if !v.is_finite() {
            return Err(AggError::NonFinite);
        }
        let residual = residual(inputs, &v, f64::INFINITY);
        return Ok(ClipOutput { v, iters: 1, residual });
    }
    let tau_final = cfg.final_tau();
    let mut sched = match cfg.mode {
        ClipMode::Schedule { delta, sigma, b0_sq } => Some((delta, sigma, b0_sq)),
        _ => None,
    };
    let mut v: GradientVector = match v0 {
        Some(v0) => v0.into(),
        None => coordinate_median(inputs)?,
    };
    let mut step = alloc::vec![0.0; d];
    for iters in 0..cfg.max_iters {
        let tau = match sched {
            Some((delta, sigma, b_sq)) => {
                let (t, next) = tau_schedule_step(delta, sigma, b_sq)?;
                if math::abs(t - tau_final) <= 1e-12 * tau_final {
                    sched = None;
                    tau_final
                } else {
                    sched = Some((delta, sigma, next));
                    t
                }
            }
            None => tau_final,
        };
        clip_step(inputs, &v, tau, &mut step);
        let s = vecmath::norm(&step);
        if s <= cfg.tol && sched.is_none() {
            return finish(v, iters, s);
        }
        v.iter_mut().zip(&step).for_each(|(a, b)| *a += b);
    }
    clip_step(inputs, &v, tau_final, &mut step);
    let r = vecmath::norm(&step);
    finish(v, cfg.max_iters, r)
}

fn finish(v: GradientVector, iters: usize, residual: f64) -> Result<ClipOutput, AggError> {
    if !v.is_finite() {
        return Err(AggError::NonFinite);
    }
    Ok(ClipOutput { v, iters, residual })
}

/// Per-coordinate median, lower middle for even counts.
pub fn coordinate_median<R: AsRef<[f64]>>(inputs: &[R]) -> Result<GradientVector, AggError> {
    let d = check_shape(inputs)?;
    let mid = (inputs.len() - 1) / 2;
    let mut col = Vec::with_capacity(inputs.len());
    Ok((0..d)
        .map(|c| {
            col.clear();
            col.extend(inputs.iter().map(|r| r.as_ref()[c]));
            col.sort_by(f64::total_cmp);
            col[mid]
        })
        .collect())
}

/// Weiszfeld iteration from the mean until the step is at most `tol`.
pub fn geometric_median<R: AsRef<[f64]>>(inputs: &[R], tol: f64) -> Result<GradientVector, AggError> {
    let d = check_shape(inputs)?;
    let mut v = vecmath::mean(inputs).ok_or(AggError::Empty)?;
    let mut next = alloc::vec![0.0; d];
    for _ in 0..1_000_000 {
        next.iter_mut().for_each(|x| *x = 0.0);
        let mut wsum = 0.0;
        for x in inputs {
            let x = x.as_ref();
            let dist = distance(x, &v).max(1e-300);
            let w = 1.0 / dist;
            wsum += w;
            next.iter_mut().zip(x).for_each(|(a, b)| *a += w * b);
        }
        next.iter_mut().for_each(|a| *a /= wsum);
        let moved = distance(&next, &v);
        v.copy_from_slice(&next);
        if moved <= tol {
            break;
        }
    }
    if !v.is_finite() {
        return Err(AggError::NonFinite);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn analytic_one_dimensional_instance() {
        let out = centered_clip(&[[0.0], [0.0], [10.0]], &ClipConfig::fixed(1.0).with_tol(1e-12, 10_000), None).unwrap();
        assert!((out.v[0] - 0.5).abs() < 1e-9, "{:?}", out);
    }

    #[test]
    fn common_point_is_fixed() {
        let w = [1.5, -2.0];
        for cfg in [ClipConfig::fixed(0.1), ClipConfig::infinite(), ClipConfig::schedule(0.1, 1.0, 0.0)] {
            let out = centered_clip(&[w; 4], &cfg, None).unwrap();
            assert_eq!(&out.v[..], &w);
            assert_eq!(out.residual, 0.0);
        }
    }

    #[test]
    fn infinite_is_mean() {
        let out = centered_clip(&[[0.0], [3.0], [6.0]], &ClipConfig::infinite(), None).unwrap();
        assert_eq!(&out.v[..], &[3.0]);
    }

    #[test]
    fn errors() {
        let empty: [[f64; 1]; 0] = [];
        assert_eq!(centered_clip(&empty, &ClipConfig::infinite(), None), Err(AggError::Empty));
        let ragged = [vec![1.0], vec![1.0, 2.0]];
        assert!(matches!(centered_clip(&ragged, &ClipConfig::infinite(), None), Err(AggError::Ragged { .. })));
        assert_eq!(centered_clip(&[[f64::NAN]], &ClipConfig::infinite(), None), Err(AggError::NonFinite));
    }

    #[test]
    fn schedule_values() {
        let (t0, b1) = tau_schedule_step(0.1, 1.0, 0.0).unwrap();
        assert!((t0 - 9.1181).abs() < 1e-3);
        assert_eq!(b1, 5.0);
        assert_eq!(tau_schedule_step(0.1, 1.0, b1).unwrap().1, 8.225);
        assert_eq!(tau_schedule_step(0.3, 0.0, 0.0).unwrap(), (0.0, 0.0));
        assert!(tau_schedule_step(0.0, 1.0, 0.0).is_err());
        assert_eq!(ClipConfig::schedule(0.0, 1.0, 0.0).mode, ClipMode::Infinite);
    }

    #[test]
    fn schedule_output_satisfies_limit_equation() {
        let inputs = [[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0], [40.0, -30.0]];
        let cfg = ClipConfig::schedule(0.25, 0.3, 0.0).with_tol(1e-10, 100_000);
        let out = centered_clip(&inputs, &cfg, None).unwrap();
        assert!(residual(&inputs, &out.v, cfg.final_tau()) <= 1e-10);
    }

    #[test]
    fn medians() {
        assert_eq!(&coordinate_median(&[[0.0], [1.0], [100.0]]).unwrap()[..], &[1.0]);
        assert_eq!(&coordinate_median(&[[0.0], [1.0], [2.0], [3.0]]).unwrap()[..], &[1.0]);
        let same = [[2.0, 3.0]; 3];
        assert_eq!(&coordinate_median(&same).unwrap()[..], &[2.0, 3.0]);
        assert_eq!(&geometric_median(&same, 1e-9).unwrap()[..], &[2.0, 3.0]);
    }

    #[test]
    fn weiszfeld_triangle_optimality() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [1.0, 5.0]];
        let g = geometric_median(&pts, 1e-12).unwrap();
        // Sum of unit vectors towards the points vanishes at the optimum.
        let mut s = [0.0; 2];
        for p in &pts {
            let dd = distance(p, &g);
            s[0] += (p[0] - g[0]) / dd;
            s[1] += (p[1] - g[1]) / dd;
        }
        assert!(vecmath::norm(&s) < 1e-6);
    }

    proptest! {
        #[test]
        fn fixed_point_certificate(
            pts in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..12),
            tau in 0.05f64..20.0,
        ) {
            let cfg = ClipConfig::fixed(tau).with_tol(1e-8, 100_000);
            let out = centered_clip(&pts, &cfg, None).unwrap();
            if out.residual <= cfg.tol {
                prop_assert!(residual(&pts, &out.v, tau) * pts.len() as f64 <= pts.len() as f64 * cfg.tol);
            }
        }

        #[test]
        fn infinite_mode_matches_mean(pts in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 1..20)) {
            let out = centered_clip(&pts, &ClipConfig::infinite(), None).unwrap();
            let m = vecmath::mean(&pts).unwrap();
            prop_assert!(distance(&out.v, &m) <= 1e-12);
        }
    }
}
