//! Experiment configuration: a TOML file with `[objective]`, `[swarm]` and
//! `[trainer]` sections, plus optional `[[sweep]]` axes.

use std::path::Path;

use btard_core::adversary::AttackKind;
use btard_core::optim::presets::{self, RestartStage};
use btard_core::optim::{Noise, Objective, ObjectiveError};
use btard_core::simnet::{Swarm, SwarmConfig, SwarmError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// Diagonal quadratic with curvatures spread over `[mu, l]` and optimum
    /// at `x_star·1`.
    Quadratic {
        d: usize,
        mu: f64,
        l: f64,
        #[serde(default = "one")]
        x_star: f64,
        #[serde(default)]
        noise: Noise,
    },
    Logistic {
        d: usize,
        samples: usize,
        batch: usize,
        #[serde(default)]
        reg: f64,
        #[serde(default)]
        data_seed: u64,
    },
    Rastrigin {
        d: usize,
        a: f64,
        #[serde(default)]
        noise: Noise,
    },
}

fn one() -> f64 {
    1.0
}

impl ObjectiveSpec {
    pub fn d(&self) -> usize {
        match *self {
            Self::Quadratic { d, .. } | Self::Logistic { d, .. } | Self::Rastrigin { d, .. } => d,
        }
    }

    pub fn build(&self) -> Result<Objective, ObjectiveError> {
        match *self {
            Self::Quadratic { d, mu, l, x_star, noise } => Objective::quadratic(d, mu, l, vec![x_star; d], noise),
            Self::Logistic { d, samples, batch, reg, data_seed } => Objective::logistic(d, samples, batch, reg, data_seed),
            Self::Rastrigin { d, a, noise } => Objective::rastrigin(d, a, noise),
        }
    }
}

/// Step-size schedule of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrainerSpec {
    Explicit {
        gamma: f64,
        iterations: usize,
        /// Radius of the feasible ball around the origin.
        #[serde(default)]
        radius: Option<f64>,
    },
    /// Restarted SGD for strongly convex objectives.
    Restarted {
        r0: f64,
        restarts: u32,
        #[serde(default)]
        radius: Option<f64>,
    },
    /// Restarted clipped SGD for noise with bounded `alpha`-th moment `g`.
    RestartedClipped {
        r0: f64,
        restarts: u32,
        g: f64,
        alpha: f64,
        radius: f64,
    },
}

impl TrainerSpec {
    pub fn radius(&self) -> Option<f64> {
        match *self {
            Self::Explicit { radius, .. } | Self::Restarted { radius, .. } => radius,
            Self::RestartedClipped { radius, .. } => Some(radius),
        }
    }
}

/// One sweep axis: every value is substituted at the dotted `path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub objective: ObjectiveSpec,
    pub swarm: SwarmConfig,
    pub trainer: TrainerSpec,
    /// Start point `x0 = start·1`.
    #[serde(default)]
    pub start: f64,
    /// Declared number of Byzantine peers; the attack list may not exceed
    /// it.
    #[serde(default)]
    pub declared_byzantine: Option<usize>,
    #[serde(default = "one_rep")]
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
}

fn one_rep() -> usize {
    1
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("objective: {0}")]
    Objective(#[from] ObjectiveError),
    #[error("swarm: {0}")]
    Swarm(#[from] SwarmError),
    #[error("schedule: {0}")]
    Preset(#[from] presets::PresetError),
    #[error("{attackers} attacking peers but only {declared} declared")]
    Declared { attackers: usize, declared: usize },
    #[error("declared {declared} Byzantine peers out of {n}: need b < n/2")]
    DeclaredMajority { declared: usize, n: usize },
    #[error("reps must be at least 1")]
    Reps,
    #[error("sweep path {0} does not name a config field")]
    SweepPath(String),
    #[error("the clipped schedule needs swarm.lambda unset (it is set per stage)")]
    ClippedLambda,
    #[error("swarm.lambda needs trainer.radius (a bounded feasible set)")]
    LambdaWithoutBall,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Peers whose strategy ever deviates.
    pub fn attackers(&self) -> usize {
        self.swarm.byzantine.iter().filter(|b| b.strategy.kind != AttackKind::Honest).count()
    }

    /// Byzantine fraction used by the schedule presets.
    pub fn delta(&self) -> f64 {
        let b = self.declared_byzantine.unwrap_or(self.swarm.byzantine.len());
        b as f64 / self.swarm.n as f64
    }

    pub fn stages(&self, objective: &Objective) -> Result<Vec<RestartStage>, ConfigError> {
        let constants = |r0: f64| presets::ProblemConstants {
            l: objective.smoothness(),
            mu: objective.strong_convexity(),
            r0,
            sigma: objective.noise.sigma(),
            n: self.swarm.n,
            m: self.swarm.m,
            delta: self.delta(),
        };
        Ok(match self.trainer {
            TrainerSpec::Explicit { gamma, iterations, .. } => vec![RestartStage { gamma, iterations, lambda: None }],
            TrainerSpec::Restarted { r0, restarts, .. } => {
                (1..=restarts).map(|t| presets::restarted_sgd_stage(&constants(r0), t)).collect::<Result<_, _>>()?
            }
            TrainerSpec::RestartedClipped { r0, restarts, g, alpha, .. } => (1..=restarts)
                .map(|t| presets::restarted_clipped_stage(&constants(r0), g, alpha, t))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Checks everything a run would reject, without running it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.reps == 0 {
            return Err(ConfigError::Reps);
        }
        if let Some(declared) = self.declared_byzantine {
            if 2 * declared >= self.swarm.n {
                return Err(ConfigError::DeclaredMajority { declared, n: self.swarm.n });
            }
            let attackers = self.attackers();
            if attackers > declared {
                return Err(ConfigError::Declared { attackers, declared });
            }
        }
        match self.trainer {
            TrainerSpec::RestartedClipped { .. } if self.swarm.lambda.is_some() => return Err(ConfigError::ClippedLambda),
            _ if self.swarm.lambda.is_some() && self.trainer.radius().is_none() => return Err(ConfigError::LambdaWithoutBall),
            _ => {}
        }
        let objective = self.objective.build()?;
        self.stages(&objective)?;
        Swarm::new(self.swarm.clone(), self.objective.d())?;
        Ok(())
    }
}

/// Expands the `[[sweep]]` axes of a config file into one config per grid
/// point, each labeled `path=value,...`.
pub fn expand_sweep(text: &str) -> Result<Vec<(String, ExperimentConfig)>, ConfigError> {
    let base: toml::Table = toml::from_str(text)?;
    let axes: Vec<SweepAxis> = match base.get("sweep") {
        Some(v) => v.clone().try_into()?,
        None => Vec::new(),
    };
    let mut points: Vec<(Vec<String>, toml::Table)> = vec![(Vec::new(), base)];
    for axis in &axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for (label, table) in &points {
            for v in &axis.values {
                let mut t = table.clone();
                set_path(&mut t, &axis.path, v.clone())?;
                let mut l = label.clone();
                l.push(format!("{}={}", axis.path, v));
                next.push((l, t));
            }
        }
        points = next;
    }
    points
        .into_iter()
        .map(|(label, mut t)| {
            t.remove("sweep");
            let cfg: ExperimentConfig = t.try_into()?;
            Ok((label.join(","), cfg))
        })
        .collect()
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let bad = || ConfigError::SweepPath(path.to_string());
    let mut keys = path.split('.').peekable();
    let mut cur = table;
    while let Some(k) = keys.next() {
        if keys.peek().is_none() {
            cur.insert(k.to_string(), value);
            return Ok(());
        }
        cur = cur.get_mut(k).and_then(toml::Value::as_table_mut).ok_or_else(bad)?;
    }
    Err(bad())
}
