//! Deterministic logical-time simulation of a BTARD swarm.

mod network;
mod queue;
mod swarm;
mod trace;

pub use network::{validate_faults, FaultError, FaultKind, FaultRule, NetConfig, Network, Schedule};
pub use queue::EventQueue;
pub use swarm::{assign_roles, mutate_payload, next_election, next_seeds, ByzantinePeer, DeltaMaxPolicy, StepReport, Swarm, SwarmConfig, SwarmError};
pub use trace::{BarrierKind, TraceEvent, TraceKind, TraceLevel};
