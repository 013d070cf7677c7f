//! Step sizes, iteration budgets and verification thresholds from the
//! convergence theorems, evaluated exactly as published.

use serde::{Deserialize, Serialize};

use crate::math;

/// Aggregation-error constant `4001 + 4((1+√3)² + 3)`.
pub fn aggregation_constant() -> f64 {
    let a = 1.0 + math::sqrt(3.0);
    4001.0 + 4.0 * (a * a + 3.0)
}

/// Constants of the heavy-tailed aggregation bound.
pub const CLIPPED_C1: f64 = 384.0;
pub const CLIPPED_C2: f64 = 4.0;

/// `Δ_max = (1+√3)√2σ/√(n_k − m)`, where `workers = n_k − m` is the number of
/// peers that computed gradients this step.
pub fn delta_max(sigma: f64, workers: usize) -> f64 {
    (1.0 + math::sqrt(3.0)) * math::sqrt(2.0) * sigma / math::sqrt(workers as f64)
}

/// Probability bound `149 / (49 (n − m))` on a Verification 3 false trigger.
pub fn false_trigger_bound(workers: usize) -> f64 {
    149.0 / (49.0 * workers as f64)
}

/// Nonconvex step size `min{1/(4L), √(Δ₀n/(Lσ²K))}`.
pub fn nonconvex_stepsize(l: f64, delta0: f64, n: usize, sigma: f64, k: usize) -> f64 {
    let second = math::sqrt(delta0 * n as f64 / (l * sigma * sigma * k as f64));
    (0.25 / l).min(second)
}

/// Convex step size `min{1/(4L), √(7nR₀²/(120σ²K)), √(m²R₀²/(1440Cσ²n²δ))}`.
pub fn convex_stepsize(l: f64, r0: f64, sigma: f64, n: usize, m: usize, delta: f64, k: usize) -> f64 {
    restarted_stepsize_term(l, r0, sigma, n, m, delta, k as f64, 1.0)
}

fn restarted_stepsize_term(l: f64, r0: f64, sigma: f64, n: usize, m: usize, delta: f64, k: f64, pow2t: f64) -> f64 {
    let nf = n as f64;
    let mf = m as f64;
    let s2 = sigma * sigma;
    let a = 0.25 / l;
    let b = math::sqrt(7.0 * nf * r0 * r0 / (120.0 * pow2t * s2 * k));
    let c = if delta == 0.0 {
        f64::INFINITY
    } else {
        math::sqrt(mf * mf * r0 * r0 / (1440.0 * pow2t * aggregation_constant() * s2 * nf * nf * delta))
    };
    a.min(b).min(c)
}

/// Clipping level `λ = G K^{1/α}`.
pub fn clipped_lambda(g: f64, k: f64, alpha: f64) -> f64 {
    g * math::powf(k, 1.0 / alpha)
}

/// Per-step level `λ_k = λ/√(n_k − m)`.
pub fn per_step_lambda(lambda: f64, workers: usize) -> f64 {
    lambda / math::sqrt(workers as f64)
}

/// Convex clipped step size
/// `min{R₀/(√6 G K^{1/α}), mR₀/(12Gn√(10δ(C₁K^{(4−α)/(2α)} + C₂K^{2/α})))}`.
pub fn clipped_convex_stepsize(r0: f64, g: f64, k: f64, alpha: f64, n: usize, m: usize, delta: f64) -> f64 {
    clipped_stepsize_term(r0, g, k, alpha, n, m, delta, 1.0)
}

fn clipped_stepsize_term(r0: f64, g: f64, k: f64, alpha: f64, n: usize, m: usize, delta: f64, pow2t_half: f64) -> f64 {
    let a = r0 / (math::sqrt(6.0) * pow2t_half * g * math::powf(k, 1.0 / alpha));
    let b = if delta == 0.0 {
        f64::INFINITY
    } else {
        let inner = CLIPPED_C1 * math::powf(k, (4.0 - alpha) / (2.0 * alpha)) + CLIPPED_C2 * math::powf(k, 2.0 / alpha);
        m as f64 * r0 / (12.0 * pow2t_half * g * n as f64 * math::sqrt(10.0 * delta * inner))
    };
    a.min(b)
}

/// `r = ⌈log₂(μR₀²/ε)⌉ − 1`
pub fn restart_count(mu: f64, r0: f64, eps: f64) -> i64 {
    math::ceil(math::log2(mu * r0 * r0 / eps)) as i64 - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartStage {
    pub gamma: f64,
    pub iterations: usize,
    /// Pre-division clipping level `λ_t` for the clipped variant.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l: f64,
    pub mu: f64,
    pub r0: f64,
    pub sigma: f64,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PresetError {
    #[error("restart schedules need μ > 0 and R₀ > 0")]
    NotStronglyConvex,
    #[error("δ > 0 requires m ≥ 1 validators")]
    NoValidators,
}

/// Stage `t ≥ 1` of the restarted SGD schedule:
/// `K_t = ⌈max{16L/μ, 32σ²2^t/(μ²R₀²), 48√(10C)n√δσ2^{t/2}/(mμR₀)}⌉`, and
/// `γ_t` as in [`convex_stepsize`] with the `2^t` factors.
pub fn restarted_sgd_stage(c: &ProblemConstants, t: u32) -> Result<RestartStage, PresetError> {
    if !(c.mu > 0.0 && c.r0 > 0.0) {
        return Err(PresetError::NotStronglyConvex);
    }
    if c.delta > 0.0 && c.m == 0 {
        return Err(PresetError::NoValidators);
    }
    let p = math::powf(2.0, t as f64);
    let a = 16.0 * c.l / c.mu;
    let b = 32.0 * c.sigma * c.sigma * p / (c.mu * c.mu * c.r0 * c.r0);
    let third = if c.delta == 0.0 {
        0.0
    } else {
        48.0 * math::sqrt(10.0 * aggregation_constant()) * c.n as f64 * math::sqrt(c.delta) * c.sigma * math::sqrt(p)
            / (c.m as f64 * c.mu * c.r0)
    };
    let k = math::ceil(a.max(b).max(third));
    let gamma = restarted_stepsize_term(c.l, c.r0, c.sigma, c.n, c.m, c.delta, k, p);
    Ok(RestartStage { gamma, iterations: k as usize, lambda: None })
}

/// Stage `t ≥ 1` of the restarted clipped schedule (heavy-tailed noise with
/// `α`-moment bound `G`). `K_t` is rounded up to an integer.
pub fn restarted_clipped_stage(c: &ProblemConstants, g: f64, alpha: f64, t: u32) -> Result<RestartStage, PresetError> {
    if !(c.mu > 0.0 && c.r0 > 0.0) {
        return Err(PresetError::NotStronglyConvex);
    }
    if c.delta > 0.0 && c.m == 0 {
        return Err(PresetError::NoValidators);
    }
    let half = math::powf(2.0, t as f64 / 2.0);
    let e = alpha / (alpha - 1.0);
    let a = math::powf(2.0 * math::sqrt(6.0) * g * half / (c.mu * c.r0), e);
    let b = if c.delta == 0.0 {
        0.0
    } else {
        math::powf(
            24.0 * g * c.n as f64 * math::sqrt(10.0 * c.delta * (CLIPPED_C1 + CLIPPED_C2)) * half / (c.m as f64 * c.mu * c.r0),
            e,
        )
    };
    let k = math::ceil(a.max(b)).max(1.0);
    let gamma = clipped_stepsize_term(c.r0, g, k, alpha, c.n, c.m, c.delta, half);
    Ok(RestartStage { gamma, iterations: k as usize, lambda: Some(clipped_lambda(g, k, alpha)) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        assert!((aggregation_constant() - 4042.856_406).abs() < 1e-5);
        assert!((delta_max(1.0, 14) - 1.032_618).abs() < 1e-6);
        assert!((false_trigger_bound(170) - 0.017887).abs() < 1e-6);
    }

    #[test]
    fn nonconvex_example() {
        assert_eq!(nonconvex_stepsize(1.0, 1.0, 16, 1.0, 4096), 0.0625);
        assert_eq!(nonconvex_stepsize(1.0, 1e6, 16, 1.0, 1), 0.25);
    }

    #[test]
    fn lambda_example() {
        assert_eq!(clipped_lambda(1.0, 1024.0, 2.0), 32.0);
        assert_eq!(per_step_lambda(32.0, 16), 8.0);
    }

    #[test]
    fn restart_count_example() {
        assert_eq!(restart_count(1.0, 4.0, 1.0), 3);
        assert_eq!(restart_count(1.0, 2.0, 2.0), 0);
    }

    #[test]
    fn restarted_sgd_stage_without_byzantines() {
        let c = ProblemConstants { l: 2.0, mu: 1.0, r0: 4.0, sigma: 2.0, n: 8, m: 0, delta: 0.0 };
        let s = restarted_sgd_stage(&c, 1).unwrap();
        // max{32, 32·4·2/16 = 16} = 32
        assert_eq!(s.iterations, 32);
        let b = (7.0 * 8.0 * 16.0 / (120.0 * 2.0 * 4.0 * 32.0f64)).sqrt();
        assert_eq!(s.gamma, (0.125f64).min(b));
        let s3 = restarted_sgd_stage(&c, 3).unwrap();
        assert_eq!(s3.iterations, 64);
    }

    #[test]
    fn restarted_schedules_reject_bad_input() {
        let c = ProblemConstants { l: 1.0, mu: 0.0, r0: 1.0, sigma: 1.0, n: 8, m: 1, delta: 0.1 };
        assert!(restarted_sgd_stage(&c, 1).is_err());
        let c = ProblemConstants { mu: 1.0, m: 0, ..c };
        assert_eq!(restarted_sgd_stage(&c, 1), Err(PresetError::NoValidators));
    }

    #[test]
    fn clipped_stage_lambda_consistent() {
        let c = ProblemConstants { l: 1.0, mu: 1.0, r0: 10.0, sigma: 0.0, n: 16, m: 1, delta: 0.0 };
        let s = restarted_clipped_stage(&c, 2.0, 1.5, 2).unwrap();
        let k = s.iterations as f64;
        assert_eq!(s.lambda, Some(clipped_lambda(2.0, k, 1.5)));
        assert!(s.gamma > 0.0);
    }
}
