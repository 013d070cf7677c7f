//! Single runs, repetitions and sweeps, and what they write to disk.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use btard_core::adversary::AttackKind;
use btard_core::optim::{self, presets, MetricsRow, Objective, TrainError, TrainerConfig, Trajectory};
use btard_core::protocol::{BanCause, PeerId};
use btard_core::simnet::{Swarm, TraceEvent};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, TrainerSpec};
use crate::output::{self, EventWriter, Header};

/// Env var holding the worker thread count for repetitions and sweeps.
pub const WORKERS_ENV: &str = "BTARD_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl RunError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.to_path_buf(), source }
    }
}

/// Everything one seeded run produced.
pub struct RunResult {
    pub seed: u64,
    pub trajectory: Trajectory,
    pub trace: Vec<TraceEvent>,
    pub byzantine: Vec<(PeerId, u64)>,
    pub n: usize,
    pub m: usize,
}

/// Runs `cfg` once with the swarm seeded by `seed`.
pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let objective = cfg.objective.build().map_err(ConfigError::from)?;
    let mut swarm_cfg = cfg.swarm.clone();
    swarm_cfg.seed = seed;
    let byzantine = swarm_cfg
        .byzantine
        .iter()
        .filter(|b| b.strategy.kind != AttackKind::Honest)
        .map(|b| (b.peer, b.strategy.start))
        .collect();
    let mut swarm = Swarm::new(swarm_cfg, objective.d).map_err(ConfigError::from)?;
    let trajectory = train(cfg, &objective, &mut swarm)?;
    Ok(RunResult { seed, trajectory, trace: swarm.take_trace(), byzantine, n: cfg.swarm.n, m: cfg.swarm.m })
}

fn train(cfg: &ExperimentConfig, objective: &Objective, swarm: &mut Swarm) -> Result<Trajectory, RunError> {
    let x0 = vec![cfg.start; objective.d];
    let radius = cfg.trainer.radius();
    if let TrainerSpec::Explicit { gamma, iterations, .. } = cfg.trainer {
        let mut t = TrainerConfig::new(gamma, iterations);
        t.projection_radius = radius;
        let tr = if cfg.swarm.lambda.is_some() {
            optim::btard_clipped_sgd(objective, &x0, &t, swarm)?
        } else {
            optim::btard_sgd(objective, &x0, &t, swarm)?
        };
        return Ok(tr);
    }
    let stages = cfg.stages(objective)?;
    let parts = optim::restarted(objective, &x0, &stages, radius, swarm)?;
    let mut merged = Trajectory::default();
    let mut offset = optim::BanCounts::default();
    for p in parts {
        let mut stage_end = offset;
        for mut r in p.rows {
            r.banned = add_counts(offset, r.banned);
            stage_end = r.banned;
            merged.rows.push(r);
        }
        offset = stage_end;
        merged.participants.extend(p.participants);
        merged.bans.extend(p.bans);
        merged.snapshots.extend(p.snapshots);
        merged.aborted_at = merged.aborted_at.or(p.aborted_at);
        merged.x = p.x;
        merged.average = p.average;
    }
    Ok(merged)
}

fn add_counts(a: optim::BanCounts, b: optim::BanCounts) -> optim::BanCounts {
    optim::BanCounts {
        gradient_fraud: a.gradient_fraud + b.gradient_fraud,
        aggregation_fraud: a.aggregation_fraud + b.aggregation_fraud,
        false_accusation: a.false_accusation + b.false_accusation,
        protocol_violation: a.protocol_violation + b.protocol_violation,
        mutual_eliminate: a.mutual_eliminate + b.mutual_eliminate,
        cover_up: a.cover_up + b.cover_up,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanRecord {
    pub step: u64,
    pub peer: PeerId,
    pub cause: BanCause,
    pub byzantine: bool,
}

/// Min, quartiles and max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        (!v.is_empty()).then(|| Self { min: v[0], p25: q(0.25), median: q(0.5), p75: q(0.75), max: v[v.len() - 1] })
    }
}

/// Pass/fail of the safety properties a run can check on itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checks {
    pub all_byzantine_banned: bool,
    /// Honest peers only ever leave through mutual elimination, and no more
    /// of them than Byzantine peers eliminated the same way.
    pub honest_losses_bounded: bool,
    pub byzantine_fraction_non_increasing: bool,
    pub check_averaging_rate: f64,
    /// Worst-case false-trigger rate for an honest swarm of this size.
    pub check_averaging_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub final_gap: Option<f64>,
    pub aborted_at: Option<u64>,
    pub bans: Vec<BanRecord>,
    /// Steps from attack start to ban, over banned Byzantine peers.
    pub ban_delay: Option<Quantiles>,
    /// First step after the last Byzantine ban whose loss is back within
    /// twice the loss at the step the first attack started. Fewer workers
    /// remain after the bans, so the noise floor itself rises.
    pub recovery_step: Option<u64>,
    pub checks: Checks,
}

impl RunSummary {
    pub fn new(r: &RunResult, objective: &Objective) -> Self {
        let tr = &r.trajectory;
        let byz: BTreeSet<PeerId> = r.byzantine.iter().map(|b| b.0).collect();
        let bans: Vec<BanRecord> = tr
            .bans
            .iter()
            .map(|&(step, peer, cause)| BanRecord { step, peer, cause, byzantine: byz.contains(&peer) })
            .collect();
        let delays: Vec<f64> = bans
            .iter()
            .filter(|b| b.byzantine)
            .filter_map(|b| r.byzantine.iter().find(|x| x.0 == b.peer).map(|x| b.step.saturating_sub(x.1) as f64))
            .collect();
        let honest: Vec<&BanRecord> = bans.iter().filter(|b| !b.byzantine).collect();
        let byz_mutual = bans.iter().filter(|b| b.byzantine && b.cause == BanCause::MutualEliminate).count();
        let honest_losses_bounded =
            honest.iter().all(|b| b.cause == BanCause::MutualEliminate) && honest.len() <= byz_mutual;

        let mut active: BTreeSet<PeerId> = (0..r.n as u32).map(PeerId).collect();
        let mut fraction = byz.len() as f64 / r.n as f64;
        let mut non_increasing = true;
        for (i, b) in bans.iter().enumerate() {
            active.remove(&b.peer);
            // Bans of one step land together.
            if active.is_empty() || bans.get(i + 1).is_some_and(|n| n.step == b.step) {
                continue;
            }
            let f = active.iter().filter(|p| byz.contains(p)).count() as f64 / active.len() as f64;
            non_increasing &= f <= fraction + 1e-12;
            fraction = f;
        }

        let last_byz_ban = bans.iter().filter(|b| b.byzantine).map(|b| b.step).max();
        let first_attack = r.byzantine.iter().map(|b| b.1).min();
        let recovery_step = match (first_attack, last_byz_ban) {
            (Some(a), Some(last)) => tr.rows.iter().find(|row| row.step == a).and_then(|base| {
                tr.rows.iter().find(|row| row.step > last && row.loss <= 2.0 * base.loss).map(|row| row.step)
            }),
            _ => None,
        };

        let triggers: usize = tr.rows.iter().map(|row| row.check_averaging).sum();
        let workers = r.n.saturating_sub(r.m).max(1);
        let final_loss = objective.value(&tr.x).ok();
        Self {
            seed: r.seed,
            steps: tr.rows.len(),
            final_loss,
            final_gap: objective.gap(&tr.x).ok(),
            aborted_at: tr.aborted_at,
            ban_delay: Quantiles::of(&delays),
            recovery_step,
            checks: Checks {
                all_byzantine_banned: byz.iter().all(|p| bans.iter().any(|b| b.peer == *p)),
                honest_losses_bounded,
                byzantine_fraction_non_increasing: non_increasing,
                check_averaging_rate: triggers as f64 / tr.rows.len().max(1) as f64,
                check_averaging_bound: presets::false_trigger_bound(workers),
            },
            bans,
        }
    }
}

/// Per-step mean, min and max over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub step: u64,
    pub runs: usize,
    pub loss_mean: f64,
    pub loss_min: f64,
    pub loss_max: f64,
    pub gap_mean: Option<f64>,
    pub gap_min: Option<f64>,
    pub gap_max: Option<f64>,
}

pub fn bands(runs: &[&[MetricsRow]]) -> Vec<BandRow> {
    let len = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let rows: Vec<&MetricsRow> = runs.iter().filter_map(|r| r.get(i)).collect();
            let stats = |v: Vec<f64>| {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                (mean, v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            };
            let (loss_mean, loss_min, loss_max) = stats(rows.iter().map(|r| r.loss).collect());
            let gaps: Option<Vec<f64>> = rows.iter().map(|r| r.gap).collect();
            let g = gaps.map(stats);
            BandRow {
                step: rows[0].step,
                runs: rows.len(),
                loss_mean,
                loss_min,
                loss_max,
                gap_mean: g.map(|g| g.0),
                gap_min: g.map(|g| g.1),
                gap_max: g.map(|g| g.2),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub runs: Vec<RunSummary>,
}

/// What [`execute`] did, for the exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub aborted: bool,
}

/// Writes one run's artifacts into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, r: &RunResult, summary: &RunSummary) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(RunError::io(dir))?;
    let metrics = dir.join("metrics.csv");
    output::write_metrics(&metrics, &r.trajectory.rows).map_err(|source| RunError::Csv { path: metrics, source })?;
    let events = dir.join("events.jsonl");
    let mut w = EventWriter::create(&events).map_err(RunError::io(&events))?;
    let mut echo = cfg.clone();
    echo.swarm.seed = r.seed;
    echo.reps = 1;
    w.header(&Header { config: echo, seed: r.seed }).map_err(RunError::io(&events))?;
    for e in &r.trace {
        w.event(e).map_err(RunError::io(&events))?;
    }
    w.finish().map_err(RunError::io(&events))?;
    write_json(&dir.join("run.json"), summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RunError::io(path)(e.into()))?;
    fs::write(path, text + "\n").map_err(RunError::io(path))
}

/// Thread pool sized by [`WORKERS_ENV`], defaulting to rayon's choice.
pub fn pool() -> rayon::ThreadPool {
    let n = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool")
}

/// Runs `cfg.reps` repetitions (seeds `swarm.seed`, `swarm.seed + 1`, ...)
/// and writes per-run files plus `summary.json` (and `bands.csv` when
/// there is more than one run) under `out`.
pub fn execute(cfg: &ExperimentConfig, out: &Path, pool: &rayon::ThreadPool) -> Result<Outcome, RunError> {
    cfg.validate()?;
    let objective = cfg.objective.build().map_err(ConfigError::from)?;
    let seeds: Vec<u64> = (0..cfg.reps as u64).map(|i| cfg.swarm.seed.wrapping_add(i)).collect();
    let results: Vec<Result<RunSummary, RunError>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let r = run_once(cfg, seed)?;
                let s = RunSummary::new(&r, &objective);
                let dir = if cfg.reps == 1 { out.to_path_buf() } else { out.join(format!("seed-{seed}")) };
                write_run(&dir, cfg, &r, &s)?;
                Ok(s)
            })
            .collect()
    });
    let runs: Vec<RunSummary> = results.into_iter().collect::<Result<_, _>>()?;
    if cfg.reps > 1 {
        let all: Vec<Vec<MetricsRow>> = seeds
            .iter()
            .map(|s| {
                let path = out.join(format!("seed-{s}")).join("metrics.csv");
                output::read_metrics(&path).map(|rows| rows.iter().map(to_metrics).collect()).map_err(|source| RunError::Csv { path, source })
            })
            .collect::<Result<_, _>>()?;
        let refs: Vec<&[MetricsRow]> = all.iter().map(Vec::as_slice).collect();
        let path = out.join("bands.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|source| RunError::Csv { path: path.clone(), source })?;
        for b in bands(&refs) {
            w.serialize(b).map_err(|source| RunError::Csv { path: path.clone(), source })?;
        }
        w.flush().map_err(RunError::io(&path))?;
    }
    let aborted = runs.iter().any(|r| r.aborted_at.is_some());
    let summary = Summary { config: cfg.clone(), runs };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Outcome { summary, aborted })
}

fn to_metrics(r: &output::CsvRow) -> MetricsRow {
    MetricsRow {
        step: r.step,
        loss: r.loss,
        gap: r.gap,
        grad_norm: r.grad_norm,
        active: r.active,
        banned: optim::BanCounts {
            gradient_fraud: r.gradient_fraud,
            aggregation_fraud: r.aggregation_fraud,
            false_accusation: r.false_accusation,
            protocol_violation: r.protocol_violation,
            mutual_eliminate: r.mutual_eliminate,
            cover_up: r.cover_up,
        },
        check_averaging: r.check_averaging,
        bytes_broadcast: r.bytes_broadcast,
        bytes_p2p: r.bytes_p2p,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub dir: String,
    pub summary: Summary,
}

/// Runs every grid point into `out/point-<i>` and writes `sweep.json`.
pub fn sweep(points: &[(String, ExperimentConfig)], out: &Path, pool: &rayon::ThreadPool) -> Result<(Vec<SweepPoint>, bool), RunError> {
    for (_, c) in points {
        c.validate()?;
    }
    let mut done = Vec::with_capacity(points.len());
    let mut aborted = false;
    for (i, (label, c)) in points.iter().enumerate() {
        let dir = format!("point-{i}");
        let o = execute(c, &out.join(&dir), pool)?;
        aborted |= o.aborted;
        done.push(SweepPoint { label: label.clone(), dir, summary: o.summary });
    }
    write_json(&out.join("sweep.json"), &done)?;
    Ok((done, aborted))
}
