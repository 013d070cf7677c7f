//! Objectives, step-size presets and the training loops.

mod objective;
pub mod presets;
mod train;

pub use objective::{compute_gradient, pareto_radius, pareto_scale, Noise, Objective, ObjectiveError, ObjectiveKind};
pub use train::*;
