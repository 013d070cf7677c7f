//! Byzantine strategies.
//!
//! Attackers are omniscient within a step: the simulator hands every
//! strategy the honest gradients of the current step before it has to
//! commit. They never see honest keys or beacon values before the reveal.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::math;
use crate::protocol::PeerId;
use crate::vecmath::{self, GradientVector, SeededStream};

/// How a Byzantine aggregator hides a shifted aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cover {
    #[default]
    None,
    /// Byzantine contributors misreport their checksums so the reported sum
    /// still vanishes.
    CoSigners,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlanderMode {
    #[default]
    Accuse,
    Eliminate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackKind {
    #[default]
    Honest,
    SignFlip {
        lambda: f64,
    },
    /// `λ·u` with `u` a unit direction shared by all attackers in a step.
    RandomDirection {
        lambda: f64,
    },
    WrongObjective,
    DelayedGradient {
        lag: usize,
    },
    /// `−ε` times the honest mean.
    Ipm {
        eps: f64,
    },
    Alie,
    /// Shifts the owned aggregate part by `scale·Δ_max` along a random unit
    /// direction.
    AggShift {
        scale: f64,
        #[serde(default)]
        cover: Cover,
    },
    Slander {
        #[serde(default)]
        mode: SlanderMode,
    },
    /// Withholds parts and aggregates from honest peers.
    SilentDrop,
    /// Sends honest aggregators parts that do not match the committed hashes.
    BadPart,
    /// Runs `inner` only at steps `start + k·period`.
    Periodic {
        inner: Box<AttackKind>,
        period: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttackStrategy {
    #[serde(flatten)]
    pub kind: AttackKind,
    #[serde(default)]
    pub start: u64,
}

impl AttackStrategy {
    pub fn new(kind: AttackKind, start: u64) -> Self {
        Self { kind, start }
    }

    /// The attack in effect at `step`, if any.
    pub fn active_at(&self, step: u64) -> Option<&AttackKind> {
        if step < self.start {
            return None;
        }
        match &self.kind {
            AttackKind::Honest => None,
            AttackKind::Periodic { inner, period } => {
                ((step - self.start) % (*period).max(1) == 0).then_some(&**inner).filter(|k| **k != AttackKind::Honest)
            }
            k => Some(k),
        }
    }
}

/// What an attacker sees when forging its gradient.
pub struct ForgeContext<'a> {
    pub step: u64,
    pub own_true: &'a GradientVector,
    pub honest: &'a [&'a GradientVector],
    /// Step-level seed shared by the attackers only.
    pub shared_seed: u64,
    pub history: Option<&'a VecDeque<GradientVector>>,
    pub wrong: Option<&'a GradientVector>,
}

/// The gradient a Byzantine peer sends under `kind`.
pub fn forge_gradient(kind: &AttackKind, ctx: &ForgeContext<'_>) -> GradientVector {
    let g = ctx.own_true;
    match kind {
        AttackKind::SignFlip { lambda } => g.iter().map(|v| -lambda * v).collect(),
        AttackKind::RandomDirection { lambda } => {
            let u = shared_direction(ctx.shared_seed, g.len());
            u.iter().map(|v| lambda * v).collect()
        }
        AttackKind::WrongObjective => ctx.wrong.cloned().unwrap_or_else(|| g.clone()),
        AttackKind::DelayedGradient { lag } => ctx
            .history
            .filter(|h| h.len() >= *lag && *lag > 0)
            .and_then(|h| h.get(h.len() - lag))
            .cloned()
            .unwrap_or_else(|| g.clone()),
        AttackKind::Ipm { eps } => match vecmath::mean(ctx.honest) {
            Some(m) => m.iter().map(|v| -eps * v).collect(),
            None => g.clone(),
        },
        AttackKind::Alie => alie(ctx.honest).unwrap_or_else(|| g.clone()),
        AttackKind::Periodic { inner, .. } => forge_gradient(inner, ctx),
        _ => g.clone(),
    }
}

/// Coordinate-wise `mean − z·std`, with `z` as large as the honest range
/// allows: `z_c = (mean_c − min_c)/std_c`.
pub fn alie(honest: &[&GradientVector]) -> Option<GradientVector> {
    let mean = vecmath::mean(honest)?;
    let n = honest.len() as f64;
    let out = (0..mean.len())
        .map(|c| {
            let var = honest.iter().map(|g| (g[c] - mean[c]) * (g[c] - mean[c])).sum::<f64>() / n;
            let std = math::sqrt(var);
            let min = honest.iter().map(|g| g[c]).fold(f64::INFINITY, f64::min);
            if std > 0.0 {
                let z = (mean[c] - min) / std;
                mean[c] - z * std
            } else {
                mean[c]
            }
        })
        .collect();
    Some(out)
}

/// Unit vector of length `d` drawn from `seed`.
pub fn shared_direction(seed: u64, d: usize) -> GradientVector {
    let mut s = SeededStream::new(seed);
    let mut u: GradientVector = (0..d).map(|_| s.next_normal()).collect();
    let nrm = u.norm();
    if nrm > 0.0 {
        u.scale(1.0 / nrm);
    }
    u
}

/// Forged aggregate part: the honest clip output moved by `scale·Δ_max`.
pub fn forge_aggregate(true_output: &[f64], scale: f64, delta_max: f64, seed: u64) -> GradientVector {
    let u = shared_direction(seed, true_output.len());
    let shift = if delta_max.is_finite() { scale * delta_max } else { scale };
    true_output.iter().zip(u.iter()).map(|(v, d)| v + shift * d).collect()
}

/// Checksums the colluders report so the partition's sum reads zero. Every
/// colluder carries an equal share of the true sum.
pub fn cover_checksums(true_sum: f64, colluders: &BTreeMap<PeerId, f64>) -> BTreeMap<PeerId, f64> {
    let k = colluders.len().max(1) as f64;
    colluders.iter().map(|(&p, &s)| (p, s - true_sum / k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn ctx<'a>(g: &'a GradientVector, honest: &'a [&'a GradientVector]) -> ForgeContext<'a> {
        ForgeContext { step: 0, own_true: g, honest, shared_seed: 7, history: None, wrong: None }
    }

    #[test]
    fn sign_flip() {
        let g = GradientVector::from(vec![1.0, -2.0]);
        let out = forge_gradient(&AttackKind::SignFlip { lambda: 1000.0 }, &ctx(&g, &[]));
        assert_eq!(&out[..], &[-1000.0, 2000.0]);
    }

    #[test]
    fn ipm() {
        let a = GradientVector::from(vec![1.0, 3.0]);
        let b = GradientVector::from(vec![3.0, 5.0]);
        let out = forge_gradient(&AttackKind::Ipm { eps: 0.1 }, &ctx(&a, &[&a, &b]));
        assert!((out[0] + 0.2).abs() < 1e-15 && (out[1] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn honest_is_identity() {
        let g = GradientVector::from(vec![0.5, 0.25]);
        assert_eq!(forge_gradient(&AttackKind::Honest, &ctx(&g, &[])), g);
        assert!(AttackStrategy::new(AttackKind::Honest, 0).active_at(5).is_none());
    }

    #[test]
    fn random_direction_is_shared() {
        let a = GradientVector::from(vec![1.0; 8]);
        let b = GradientVector::from(vec![-3.0; 8]);
        let k = AttackKind::RandomDirection { lambda: 10.0 };
        let (fa, fb) = (forge_gradient(&k, &ctx(&a, &[])), forge_gradient(&k, &ctx(&b, &[])));
        assert_eq!(fa, fb);
        assert!((fa.norm() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn alie_stays_in_range() {
        let h: Vec<GradientVector> = (0..5).map(|i| GradientVector::from(vec![i as f64, 2.0 * i as f64])).collect();
        let r: Vec<&GradientVector> = h.iter().collect();
        let out = alie(&r).unwrap();
        assert_eq!(&out[..], &[0.0, 0.0]);
    }

    #[test]
    fn delayed_gradient_waits_for_history() {
        let g = GradientVector::from(vec![9.0]);
        let mut hist = VecDeque::new();
        let k = AttackKind::DelayedGradient { lag: 2 };
        let mut c = ctx(&g, &[]);
        c.history = Some(&hist);
        assert_eq!(forge_gradient(&k, &c), g);
        hist.push_back(GradientVector::from(vec![1.0]));
        hist.push_back(GradientVector::from(vec![2.0]));
        let mut c = ctx(&g, &[]);
        c.history = Some(&hist);
        assert_eq!(&forge_gradient(&k, &c)[..], &[1.0]);
    }

    #[test]
    fn periodic_fires_every_period() {
        let s = AttackStrategy::new(
            AttackKind::Periodic { inner: Box::new(AttackKind::SignFlip { lambda: 1.0 }), period: 5 },
            10,
        );
        let fired: Vec<u64> = (0..40).filter(|&t| s.active_at(t).is_some()).collect();
        assert_eq!(fired, vec![10, 15, 20, 25, 30, 35]);
    }

    #[test]
    fn cover_zeroes_the_sum() {
        let mut c = BTreeMap::new();
        c.insert(PeerId(1), 0.3);
        c.insert(PeerId(4), -0.1);
        let honest_sum = 0.7;
        let total = honest_sum + 0.3 - 0.1;
        let out = cover_checksums(total, &c);
        let reported: f64 = honest_sum + out.values().sum::<f64>();
        assert!(reported.abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn periodic_fires_exactly_on_period(start in 0u64..50, period in 1u64..20, step in 0u64..500) {
            let a = AttackStrategy::new(AttackKind::Periodic { inner: alloc::boxed::Box::new(AttackKind::SignFlip { lambda: 1.0 }), period }, start);
            let expected = step >= start && (step - start) % period == 0;
            proptest::prop_assert_eq!(a.active_at(step).is_some(), expected);
        }
    }
}
