//! Experiment runner around `btard-core`: TOML configs, runs, sweeps,
//! on-disk metrics and event logs, and trace verification.

pub mod config;
pub mod experiment;
pub mod output;
pub mod verify;

pub use config::{expand_sweep, ConfigError, ExperimentConfig};
pub use experiment::{execute, run_once, sweep, Outcome, RunError, RunResult, RunSummary, Summary};
pub use verify::{verify_trace, VerifyError};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Replay diverged from the trace, or an IO failure.
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    /// Every peer ended up banned.
    pub const ALL_BANNED: u8 = 3;
}
