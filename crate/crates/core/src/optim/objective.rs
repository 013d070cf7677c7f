//! Synthetic objectives with seeded stochastic gradients.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::vecmath::{self, GradientVector, SeededStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Noise {
    #[default]
    None,
    /// Isotropic Gaussian with `E‖ξ‖² = σ²`, so any `s` coordinates carry
    /// variance `s·σ²/d`.
    Gaussian { sigma: f64 },
    /// `R·u` with `u` uniform on the sphere and `R` Pareto with tail index
    /// `(α+2)/2`, scaled so `E R^α = G^α/2`. The α-moment is finite, the
    /// variance is not (for α < 2).
    HeavyTail { alpha: f64, g: f64 },
}

impl Noise {
    pub fn sigma(&self) -> f64 {
        match *self {
            Noise::Gaussian { sigma } => sigma,
            Noise::None => 0.0,
            Noise::HeavyTail { .. } => f64::INFINITY,
        }
    }

    /// Adds one noise draw to `g`.
    pub fn apply(&self, g: &mut [f64], stream: &mut SeededStream) {
        match *self {
            Noise::None => {}
            Noise::Gaussian { sigma } => {
                let s = sigma / math::sqrt(g.len() as f64);
                g.iter_mut().for_each(|v| *v += s * stream.next_normal());
            }
            Noise::HeavyTail { alpha, g: big_g } => {
                let r = pareto_radius(alpha, big_g, stream);
                let u: Vec<f64> = (0..g.len()).map(|_| stream.next_normal()).collect();
                let nrm = vecmath::norm(&u);
                if nrm > 0.0 {
                    g.iter_mut().zip(&u).for_each(|(v, d)| *v += r * d / nrm);
                }
            }
        }
    }
}

fn pareto_tail_index(alpha: f64) -> f64 {
    (alpha + 2.0) / 2.0
}

/// Scale `r_m` with `E R^α = k r_m^α / (k − α) = G^α / 2`.
pub fn pareto_scale(alpha: f64, g: f64) -> f64 {
    let k = pareto_tail_index(alpha);
    g * math::powf((k - alpha) / (2.0 * k), 1.0 / alpha)
}

pub fn pareto_radius(alpha: f64, g: f64, stream: &mut SeededStream) -> f64 {
    let k = pareto_tail_index(alpha);
    pareto_scale(alpha, g) * math::powf(stream.next_open01(), -1.0 / k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// `½ (x − x*)ᵀ diag(a) (x − x*)`
    Quadratic { diag: Vec<f64>, x_star: Vec<f64> },
    /// `½ (x − x*)ᵀ A (x − x*)` with a dense SPD `A` (row major).
    DenseQuadratic { a: Vec<Vec<f64>>, x_star: Vec<f64> },
    /// Ridge-regularized logistic loss on a planted synthetic dataset;
    /// stochasticity comes from minibatch sampling.
    Logistic { samples: usize, batch: usize, reg: f64, data_seed: u64 },
    /// `Σ x_i²/2 + a(1 − cos x_i)`: nonconvex for `a > 1`, minimum 0 at 0.
    Rastrigin { a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub d: usize,
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub noise: Noise,
    #[serde(skip)]
    data: Option<Dataset>,
}

#[derive(Debug, Clone, PartialEq)]
struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl Dataset {
    fn planted(samples: usize, d: usize, seed: u64) -> Self {
        let mut s = SeededStream::new(seed);
        let w: Vec<f64> = (0..d).map(|_| s.next_normal()).collect();
        let mut features = Vec::with_capacity(samples);
        let mut labels = Vec::with_capacity(samples);
        for _ in 0..samples {
            let a: Vec<f64> = (0..d).map(|_| s.next_normal() / math::sqrt(d as f64)).collect();
            let p = 1.0 / (1.0 + math::exp(-vecmath::dot(&a, &w)));
            labels.push(if s.next_open01() < p { 1.0 } else { -1.0 });
            features.push(a);
        }
        Self { features, labels }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("objective dimension {expected} does not match vector length {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid objective: {0}")]
    Invalid(&'static str),
}

impl Objective {
    pub fn new(kind: ObjectiveKind, noise: Noise) -> Result<Self, ObjectiveError> {
        let d = match &kind {
            ObjectiveKind::Quadratic { diag, x_star } => {
                if diag.len() != x_star.len() {
                    return Err(ObjectiveError::Dimension { expected: diag.len(), got: x_star.len() });
                }
                if diag.iter().any(|&a| !(a > 0.0)) {
                    return Err(ObjectiveError::Invalid("quadratic curvature must be positive"));
                }
                diag.len()
            }
            ObjectiveKind::DenseQuadratic { a, x_star } => {
                if a.len() != x_star.len() || a.iter().any(|r| r.len() != a.len()) {
                    return Err(ObjectiveError::Invalid("dense matrix must be d×d"));
                }
                x_star.len()
            }
            ObjectiveKind::Logistic { .. } => return Err(ObjectiveError::Invalid("use Objective::logistic")),
            ObjectiveKind::Rastrigin { .. } => return Err(ObjectiveError::Invalid("use Objective::rastrigin")),
        };
        if d == 0 {
            return Err(ObjectiveError::Invalid("dimension must be positive"));
        }
        Ok(Self { d, kind, noise, data: None })
    }

    /// Diagonal quadratic with curvatures spread linearly over `[μ, L]`.
    pub fn quadratic(d: usize, mu: f64, l: f64, x_star: Vec<f64>, noise: Noise) -> Result<Self, ObjectiveError> {
        let diag = (0..d)
            .map(|i| if d == 1 { l } else { mu + (l - mu) * i as f64 / (d - 1) as f64 })
            .collect();
        Self::new(ObjectiveKind::Quadratic { diag, x_star }, noise)
    }

    pub fn logistic(d: usize, samples: usize, batch: usize, reg: f64, data_seed: u64) -> Result<Self, ObjectiveError> {
        if d == 0 || samples == 0 || batch == 0 {
            return Err(ObjectiveError::Invalid("logistic sizes must be positive"));
        }
        let kind = ObjectiveKind::Logistic { samples, batch, reg, data_seed };
        Ok(Self { d, kind, noise: Noise::None, data: Some(Dataset::planted(samples, d, data_seed)) })
    }

    pub fn rastrigin(d: usize, a: f64, noise: Noise) -> Result<Self, ObjectiveError> {
        if d == 0 {
            return Err(ObjectiveError::Invalid("dimension must be positive"));
        }
        Ok(Self { d, kind: ObjectiveKind::Rastrigin { a }, noise, data: None })
    }

    /// Rebuilds derived state after deserialization.
    pub fn rebuild(self) -> Result<Self, ObjectiveError> {
        match self.kind {
            ObjectiveKind::Logistic { samples, batch, reg, data_seed } => Self::logistic(self.d, samples, batch, reg, data_seed),
            ObjectiveKind::Rastrigin { a } => Self::rastrigin(self.d, a, self.noise),
            kind => Self::new(kind, self.noise),
        }
    }

    pub fn smoothness(&self) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic { diag, .. } => diag.iter().copied().fold(0.0, f64::max),
            ObjectiveKind::DenseQuadratic { a, .. } => {
                // Gershgorin bound
                a.iter().map(|r| r.iter().map(|v| math::abs(*v)).sum::<f64>()).fold(0.0, f64::max)
            }
            ObjectiveKind::Logistic { reg, .. } => {
                let max_sq = self.data.as_ref().map_or(0.0, |ds| ds.features.iter().map(|a| vecmath::norm_sq(a)).fold(0.0, f64::max));
                max_sq / 4.0 + reg
            }
            ObjectiveKind::Rastrigin { a } => 1.0 + math::abs(*a),
        }
    }

    pub fn strong_convexity(&self) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic { diag, .. } => diag.iter().copied().fold(f64::INFINITY, f64::min),
            ObjectiveKind::Logistic { reg, .. } => *reg,
            _ => 0.0,
        }
    }

    pub fn x_star(&self) -> Option<&[f64]> {
        match &self.kind {
            ObjectiveKind::Quadratic { x_star, .. } | ObjectiveKind::DenseQuadratic { x_star, .. } => Some(x_star),
            _ => None,
        }
    }

    /// `f*` where it is known in closed form.
    pub fn optimum_value(&self) -> Option<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic { .. } | ObjectiveKind::DenseQuadratic { .. } | ObjectiveKind::Rastrigin { .. } => Some(0.0),
            ObjectiveKind::Logistic { .. } => None,
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), ObjectiveError> {
        if x.len() != self.d {
            return Err(ObjectiveError::Dimension { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        self.check(x)?;
        Ok(match &self.kind {
            ObjectiveKind::Quadratic { diag, x_star } => {
                0.5 * diag.iter().zip(x).zip(x_star).fold(0.0, |acc, ((a, xi), s)| acc + a * (xi - s) * (xi - s))
            }
            ObjectiveKind::DenseQuadratic { a, x_star } => {
                let e = vecmath::sub(x, x_star);
                0.5 * a.iter().zip(e.iter()).fold(0.0, |acc, (row, ei)| acc + ei * vecmath::dot(row, &e))
            }
            ObjectiveKind::Logistic { reg, .. } => {
                let ds = self.dataset();
                let loss = ds.features.iter().zip(&ds.labels).fold(0.0, |acc, (a, y)| acc + softplus(-y * vecmath::dot(a, x)));
                loss / ds.labels.len() as f64 + 0.5 * reg * vecmath::norm_sq(x)
            }
            ObjectiveKind::Rastrigin { a } => x.iter().fold(0.0, |acc, v| acc + 0.5 * v * v + a * (1.0 - math::cos(*v))),
        })
    }

    /// `f(x) − f*` when `f*` is known, else `f(x)`.
    pub fn gap(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        Ok(self.value(x)? - self.optimum_value().unwrap_or(0.0))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<GradientVector, ObjectiveError> {
        self.check(x)?;
        Ok(match &self.kind {
            ObjectiveKind::Logistic { samples, .. } => self.logistic_grad(x, 0..*samples, false),
            _ => self.deterministic_grad(x, false),
        })
    }

    fn dataset(&self) -> &Dataset {
        self.data.as_ref().expect("logistic objective built through Objective::logistic")
    }

    fn deterministic_grad(&self, x: &[f64], wrong: bool) -> GradientVector {
        let sign = if wrong { -1.0 } else { 1.0 };
        match &self.kind {
            ObjectiveKind::Quadratic { diag, x_star } => {
                diag.iter().zip(x).zip(x_star).map(|((a, xi), s)| a * (xi - sign * s)).collect()
            }
            ObjectiveKind::DenseQuadratic { a, x_star } => {
                let e: GradientVector = x.iter().zip(x_star).map(|(xi, s)| xi - sign * s).collect();
                a.iter().map(|row| vecmath::dot(row, &e)).collect()
            }
            ObjectiveKind::Rastrigin { a } => {
                let shift = if wrong { 2.0 } else { 0.0 };
                x.iter().map(|v| (v - shift) + a * math::sin(v - shift)).collect()
            }
            ObjectiveKind::Logistic { .. } => unreachable!("handled by logistic_grad"),
        }
    }

    fn logistic_grad(&self, x: &[f64], idx: impl Iterator<Item = usize>, flip: bool) -> GradientVector {
        let ObjectiveKind::Logistic { reg, .. } = self.kind else { unreachable!() };
        let ds = self.dataset();
        let mut g = GradientVector::zeros(self.d);
        let mut count = 0usize;
        for i in idx {
            let y = if flip { -ds.labels[i] } else { ds.labels[i] };
            let a = &ds.features[i];
            let c = -y * sigmoid(-y * vecmath::dot(a, x));
            g.axpy(c, a);
            count += 1;
        }
        g.scale(1.0 / count as f64);
        g.axpy(reg, x);
        g
    }

    fn stochastic(&self, x: &[f64], seed: u64, wrong: bool) -> Result<GradientVector, ObjectiveError> {
        self.check(x)?;
        let mut stream = SeededStream::new(seed);
        if let ObjectiveKind::Logistic { samples, batch, .. } = self.kind {
            let idx: Vec<usize> = (0..batch).map(|_| stream.next_below(samples as u64) as usize).collect();
            return Ok(self.logistic_grad(x, idx.into_iter(), wrong));
        }
        let mut g = self.deterministic_grad(x, wrong);
        self.noise.apply(&mut g, &mut stream);
        Ok(g)
    }

    /// `∇f(x, ξ)`: a pure function of `(x, seed)`.
    pub fn stochastic_gradient(&self, x: &[f64], seed: u64) -> Result<GradientVector, ObjectiveError> {
        self.stochastic(x, seed, false)
    }

    /// Gradient of a plausible but wrong objective under the same noise
    /// (`x* → −x*`, flipped labels, or a shifted minimum).
    pub fn wrong_gradient(&self, x: &[f64], seed: u64) -> Result<GradientVector, ObjectiveError> {
        self.stochastic(x, seed, true)
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + math::exp(-t))
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + math::ln_1p(math::exp(-t))
    } else {
        math::ln_1p(math::exp(t))
    }
}

/// Shorthand for [`Objective::stochastic_gradient`].
pub fn compute_gradient(objective: &Objective, x: &[f64], seed: u64) -> Result<GradientVector, ObjectiveError> {
    objective.stochastic_gradient(x, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_noiseless_gradient() {
        let f = Objective::new(ObjectiveKind::Quadratic { diag: vec![1.0], x_star: vec![0.0] }, Noise::None).unwrap();
        assert_eq!(&compute_gradient(&f, &[3.0], 1).unwrap()[..], &[3.0]);
        assert_eq!(f.value(&[3.0]).unwrap(), 4.5);
    }

    #[test]
    fn gradient_is_pure() {
        let f = Objective::quadratic(32, 0.5, 2.0, vec![1.0; 32], Noise::Gaussian { sigma: 1.0 }).unwrap();
        let x = vec![0.3; 32];
        let a = f.stochastic_gradient(&x, 77).unwrap();
        let b = f.stochastic_gradient(&x, 77).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_ne!(a, f.stochastic_gradient(&x, 78).unwrap());
    }

    #[test]
    fn unbiased_gaussian() {
        let d = 4;
        let sigma = 2.0;
        let f = Objective::quadratic(d, 1.0, 3.0, vec![0.0; d], Noise::Gaussian { sigma }).unwrap();
        let x = [1.0, -1.0, 2.0, 0.5];
        let n = 100_000;
        let mut acc = GradientVector::zeros(d);
        for s in 0..n {
            acc.axpy(1.0, &f.stochastic_gradient(&x, s).unwrap());
        }
        acc.scale(1.0 / n as f64);
        let truth = f.gradient(&x).unwrap();
        for (a, t) in acc.iter().zip(truth.iter()) {
            assert!((a - t).abs() < 4.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn wrong_objective_points_elsewhere() {
        let f = Objective::quadratic(2, 1.0, 1.0, vec![1.0, 1.0], Noise::None).unwrap();
        assert_eq!(&f.wrong_gradient(&[0.0, 0.0], 0).unwrap()[..], &[1.0, 1.0]);
        assert_eq!(&f.stochastic_gradient(&[0.0, 0.0], 0).unwrap()[..], &[-1.0, -1.0]);
    }

    #[test]
    fn logistic_matches_finite_difference() {
        let f = Objective::logistic(3, 200, 8, 0.1, 5).unwrap();
        let x = [0.2, -0.4, 0.1];
        let g = f.gradient(&x).unwrap();
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (f.value(&xp).unwrap() - f.value(&xm).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn rastrigin_gradient() {
        let f = Objective::rastrigin(2, 3.0, Noise::None).unwrap();
        let g = f.gradient(&[0.5, 0.0]).unwrap();
        assert!((g[0] - (0.5 + 3.0 * libm::sin(0.5))).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn dimension_error() {
        let f = Objective::quadratic(2, 1.0, 1.0, vec![0.0; 2], Noise::None).unwrap();
        assert!(f.stochastic_gradient(&[1.0], 0).is_err());
    }
}
