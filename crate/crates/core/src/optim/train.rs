//! Training loops over the swarm, plus the centralized references they are
//! compared against.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::objective::Objective;
use super::presets::RestartStage;
use crate::protocol::{BanCause, GradientOracle, PeerId};
use crate::simnet::{Swarm, SwarmError};
use crate::vecmath::{self, GradientVector, PartitionLayout};

/// `g·min{1, λ/‖g‖}`.
pub fn clip_gradient_part(part: &[f64], lambda: f64) -> GradientVector {
    let mut out = GradientVector::from(part);
    clip_in_place(&mut out, lambda);
    out
}

fn clip_in_place(part: &mut [f64], lambda: f64) {
    let nrm = vecmath::norm(part);
    if nrm > lambda && nrm > 0.0 {
        let s = lambda / nrm;
        part.iter_mut().for_each(|v| *v *= s);
    }
}

impl GradientOracle for Objective {
    fn worker_gradient(&self, x: &[f64], seed: u64, lambda_k: Option<f64>, layout: &PartitionLayout) -> GradientVector {
        let mut g = self.stochastic_gradient(x, seed).unwrap_or_else(|_| GradientVector::zeros(x.len()));
        if let Some(l) = lambda_k {
            for j in 0..layout.n() {
                clip_in_place(&mut g[layout.range(j)], l);
            }
        }
        g
    }
}

/// The feasible set `Q`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Projection {
    #[default]
    None,
    /// Euclidean ball around the origin.
    Ball { radius: f64 },
}

impl Projection {
    pub fn apply(&self, x: &mut [f64]) {
        if let Projection::Ball { radius } = *self {
            let nrm = vecmath::norm(x);
            if nrm > radius {
                let s = radius / nrm;
                x.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Projection::Ball { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub projection_radius: Option<f64>,
    /// Full iterate snapshots every this many steps; 0 disables them.
    pub snapshot_every: usize,
}

impl TrainerConfig {
    pub fn new(gamma: f64, iterations: usize) -> Self {
        Self { gamma, iterations, projection_radius: None, snapshot_every: 100 }
    }

    pub fn projection(&self) -> Projection {
        self.projection_radius.map_or(Projection::None, |radius| Projection::Ball { radius })
    }

    pub fn with_ball(mut self, radius: f64) -> Self {
        self.projection_radius = Some(radius);
        self
    }
}

/// Bans so far, by cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BanCounts {
    pub gradient_fraud: usize,
    pub aggregation_fraud: usize,
    pub false_accusation: usize,
    pub protocol_violation: usize,
    pub mutual_eliminate: usize,
    pub cover_up: usize,
}

impl BanCounts {
    pub fn add(&mut self, cause: BanCause) {
        match cause {
            BanCause::GradientFraud => self.gradient_fraud += 1,
            BanCause::AggregationFraud => self.aggregation_fraud += 1,
            BanCause::FalseAccusation => self.false_accusation += 1,
            BanCause::ProtocolViolation => self.protocol_violation += 1,
            BanCause::MutualEliminate => self.mutual_eliminate += 1,
            BanCause::CoverUp => self.cover_up += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.gradient_fraud
            + self.aggregation_fraud
            + self.false_accusation
            + self.protocol_violation
            + self.mutual_eliminate
            + self.cover_up
    }
}

/// One row per step, measured at the iterate the step started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    /// `f(x) − f*` when the optimum is known.
    pub gap: Option<f64>,
    pub grad_norm: f64,
    pub active: usize,
    #[serde(flatten)]
    pub banned: BanCounts,
    pub check_averaging: usize,
    pub bytes_broadcast: u64,
    pub bytes_p2p: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub rows: Vec<MetricsRow>,
    pub x: GradientVector,
    /// Mean of the iterates the steps started from.
    pub average: GradientVector,
    pub snapshots: Vec<(u64, GradientVector)>,
    /// Gradient workers and seeds of each step.
    pub participants: Vec<Vec<(PeerId, u64)>>,
    /// Every `(step, peer, cause)` ban, in order.
    pub bans: Vec<(u64, PeerId, BanCause)>,
    /// Step at which every peer was banned, if that happened.
    pub aborted_at: Option<u64>,
}

impl Trajectory {
    pub fn last_ban_step(&self) -> Option<u64> {
        self.bans.last().map(|b| b.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error("the clipped variant needs a bounded feasible set and a clipping level")]
    ClippedSetup,
    #[error("dimension mismatch: objective has {objective}, start point has {x0}")]
    Dimension { objective: usize, x0: usize },
    #[error("step size must be positive")]
    StepSize,
}

fn metrics_row(obj: &Objective, x: &[f64], step: u64) -> MetricsRow {
    MetricsRow {
        step,
        loss: obj.value(x).unwrap_or(f64::NAN),
        gap: obj.gap(x).ok(),
        grad_norm: obj.gradient(x).map(|g| g.norm()).unwrap_or(f64::NAN),
        active: 0,
        banned: BanCounts::default(),
        check_averaging: 0,
        bytes_broadcast: 0,
        bytes_p2p: 0,
    }
}

/// BTARD-SGD: every step runs the full protocol and then
/// `x ← proj_Q(x − γĝ)`.
pub fn btard_sgd(obj: &Objective, x0: &[f64], cfg: &TrainerConfig, swarm: &mut Swarm) -> Result<Trajectory, TrainError> {
    if x0.len() != obj.d {
        return Err(TrainError::Dimension { objective: obj.d, x0: x0.len() });
    }
    if !(cfg.gamma > 0.0) {
        return Err(TrainError::StepSize);
    }
    let proj = cfg.projection();
    let mut x = GradientVector::from(x0);
    let mut sum = GradientVector::zeros(x.len());
    let mut counts = BanCounts::default();
    let mut tr = Trajectory::default();
    for k in 0..cfg.iterations {
        let mut row = metrics_row(obj, &x, swarm.step_index());
        if cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0 {
            tr.snapshots.push((row.step, x.clone()));
        }
        let report = match swarm.step(obj, &x) {
            Ok(r) => r,
            Err(SwarmError::AllBanned(step)) => {
                tr.aborted_at = Some(step);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        for b in &report.bans {
            counts.add(b.cause);
            tr.bans.push((b.step, b.peer, b.cause));
        }
        row.active = report.active;
        row.banned = counts;
        row.check_averaging = report.check_averaging.len();
        row.bytes_broadcast = report.bytes_broadcast;
        row.bytes_p2p = report.bytes_p2p;
        tr.rows.push(row);
        tr.participants.push(report.participants);
        sum.axpy(1.0, &x);
        x.axpy(-cfg.gamma, &report.aggregate);
        proj.apply(&mut x);
    }
    let steps = tr.rows.len().max(1) as f64;
    sum.scale(1.0 / steps);
    tr.average = sum;
    tr.x = x;
    Ok(tr)
}

/// BTARD-Clipped-SGD: the same loop, with gradient parts clipped at `λ_k`
/// before the exchange. Needs a bounded `Q` and a clipping level on the
/// swarm.
pub fn btard_clipped_sgd(obj: &Objective, x0: &[f64], cfg: &TrainerConfig, swarm: &mut Swarm) -> Result<Trajectory, TrainError> {
    if !cfg.projection().is_bounded() || swarm.config().lambda.is_none() {
        return Err(TrainError::ClippedSetup);
    }
    btard_sgd(obj, x0, cfg, swarm)
}

/// Restarted variant: stage `t` runs `K_t` steps with `γ_t` from the
/// previous stage's averaged iterate. Returns the per-stage trajectories;
/// each one's `average` is that stage's restart point.
pub fn restarted(
    obj: &Objective,
    x0: &[f64],
    stages: &[RestartStage],
    projection_radius: Option<f64>,
    swarm: &mut Swarm,
) -> Result<Vec<Trajectory>, TrainError> {
    let mut x = GradientVector::from(x0);
    let mut out = Vec::with_capacity(stages.len());
    for s in stages {
        if let Some(l) = s.lambda {
            swarm.set_lambda(Some(l));
        }
        let cfg = TrainerConfig { gamma: s.gamma, iterations: s.iterations, projection_radius, snapshot_every: 0 };
        let tr = btard_sgd(obj, &x, &cfg, swarm)?;
        x = tr.average.clone();
        let aborted = tr.aborted_at.is_some();
        out.push(tr);
        if aborted {
            break;
        }
    }
    Ok(out)
}

/// Centralized mini-batch SGD: step `k` averages the gradients drawn from
/// `seeds[k]`. The reference for the honest path of the swarm.
pub fn serial_sgd(obj: &Objective, x0: &[f64], gamma: f64, proj: &Projection, seeds: &[Vec<u64>]) -> Vec<GradientVector> {
    let mut x = GradientVector::from(x0);
    let mut out = Vec::with_capacity(seeds.len() + 1);
    out.push(x.clone());
    for batch in seeds {
        let grads: Vec<GradientVector> = batch
            .iter()
            .map(|&s| obj.stochastic_gradient(&x, s).unwrap_or_else(|_| GradientVector::zeros(x.len())))
            .collect();
        if let Some(g) = vecmath::mean(&grads) {
            x.axpy(-gamma, &g);
        }
        proj.apply(&mut x);
        out.push(x.clone());
    }
    out
}

/// Single-worker SGD with optional whole-vector clipping; returns the
/// iterate norm after every step.
pub fn plain_sgd(obj: &Objective, x0: &[f64], gamma: f64, iterations: usize, seed: u64, lambda: Option<f64>, proj: &Projection) -> (GradientVector, Vec<f64>) {
    let mut x = GradientVector::from(x0);
    let mut norms = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let mut g = obj
            .stochastic_gradient(&x, seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .unwrap_or_else(|_| GradientVector::zeros(x.len()));
        if let Some(l) = lambda {
            clip_in_place(&mut g, l);
        }
        x.axpy(-gamma, &g);
        proj.apply(&mut x);
        norms.push(x.norm());
    }
    (x, norms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Noise;
    use alloc::vec;

    #[test]
    fn clip_examples() {
        let out = clip_gradient_part(&[0.0, 3.0, 4.0], 2.0);
        assert!((out[1] - 1.2).abs() < 1e-15 && (out[2] - 1.6).abs() < 1e-15);
        assert_eq!(&clip_gradient_part(&[0.3, 0.4], 2.0)[..], &[0.3, 0.4]);
        assert_eq!(&clip_gradient_part(&[0.0, 0.0], 2.0)[..], &[0.0, 0.0]);
    }

    #[test]
    fn ball_projection() {
        let mut x = vec![3.0, 4.0];
        Projection::Ball { radius: 1.0 }.apply(&mut x);
        assert!((vecmath::norm(&x) - 1.0).abs() < 1e-15);
        let mut y = vec![0.1, 0.1];
        Projection::None.apply(&mut y);
        assert_eq!(y, vec![0.1, 0.1]);
    }

    #[test]
    fn oracle_clips_each_part() {
        let obj = Objective::quadratic(4, 1.0, 1.0, vec![0.0; 4], Noise::None).unwrap();
        let layout = PartitionLayout::new(4, 2).unwrap();
        let g = obj.worker_gradient(&[3.0, 4.0, 0.3, 0.4], 0, Some(1.0), &layout);
        assert!((vecmath::norm(&g[0..2]) - 1.0).abs() < 1e-15);
        assert_eq!(&g[2..4], &[0.3, 0.4]);
    }

    #[test]
    fn serial_sgd_on_quadratic() {
        let obj = Objective::quadratic(1, 1.0, 1.0, vec![0.0], Noise::None).unwrap();
        let xs = serial_sgd(&obj, &[3.0], 0.5, &Projection::None, &[vec![1, 2], vec![3, 4]]);
        assert_eq!(xs.last().unwrap()[0], 0.75);
    }
}
