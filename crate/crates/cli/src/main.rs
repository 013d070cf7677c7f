use std::path::PathBuf;
use std::process::ExitCode;

use btard::config::ConfigError;
use btard::experiment::{self, WORKERS_ENV};
use btard::{exit, expand_sweep, ExperimentConfig, RunError};
use btard_core::HashMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "btard", version, about = "Byzantine-tolerant all-reduce SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config, optionally repeated over consecutive seeds.
    Run(RunArgs),
    /// Run every point of the config's [[sweep]] grid.
    Sweep(RunArgs),
    /// Check an events.jsonl and re-derive every ban from it.
    Verify {
        trace: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HashArg {
    Crypto,
    FastSim,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    hash_mode: Option<HashArg>,
    /// Worker threads for repetitions (0 = one per core).
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

impl RunArgs {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            c.swarm.seed = s;
        }
        if let Some(r) = self.reps {
            c.reps = r;
        }
        if let Some(h) = self.hash_mode {
            c.swarm.hash_mode = match h {
                HashArg::Crypto => HashMode::Crypto,
                HashArg::FastSim => HashMode::FastSim,
            };
        }
    }

    fn pool(&self) -> rayon::ThreadPool {
        match self.workers {
            Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool"),
            None => experiment::pool(),
        }
    }
}

fn run_error(e: RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        RunError::Config(_) => exit::CONFIG,
        _ => exit::FAILURE,
    })
}

fn config_error(e: ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(exit::CONFIG)
}

fn done(aborted: bool) -> ExitCode {
    if aborted {
        eprintln!("every peer was banned; run aborted (outputs written)");
        ExitCode::from(exit::ALL_BANNED)
    } else {
        ExitCode::from(exit::OK)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => {
            let mut c = match ExperimentConfig::load(&a.config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            a.apply(&mut c);
            match experiment::execute(&c, &a.out, &a.pool()) {
                Ok(o) => {
                    for r in &o.summary.runs {
                        println!(
                            "seed {}: {} steps, final loss {:.6e}, {} bans, all byzantine banned: {}",
                            r.seed,
                            r.steps,
                            r.final_loss.unwrap_or(f64::NAN),
                            r.bans.len(),
                            r.checks.all_byzantine_banned
                        );
                    }
                    done(o.aborted)
                }
                Err(e) => run_error(e),
            }
        }
        Command::Sweep(a) => {
            let text = match std::fs::read_to_string(&a.config) {
                Ok(t) => t,
                Err(source) => return config_error(ConfigError::Io { path: a.config.display().to_string(), source }),
            };
            let mut points = match expand_sweep(&text) {
                Ok(p) => p,
                Err(e) => return config_error(e),
            };
            for (_, c) in &mut points {
                a.apply(c);
            }
            match experiment::sweep(&points, &a.out, &a.pool()) {
                Ok((done_points, aborted)) => {
                    for p in &done_points {
                        println!("{} -> {}", p.label, p.dir);
                    }
                    done(aborted)
                }
                Err(e) => run_error(e),
            }
        }
        Command::Verify { trace } => match btard::verify_trace(&trace) {
            Ok(r) if r.is_consistent() => {
                println!("consistent, {} steps, {} bans", r.steps, r.bans.len());
                ExitCode::from(exit::OK)
            }
            Ok(r) => {
                for d in &r.divergences {
                    println!("divergence at {d}");
                }
                ExitCode::from(exit::FAILURE)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit::CONFIG)
            }
        },
    }
}
