//! Byzantine-tolerant all-reduce SGD.
//!
//! The crate is `no_std` (with `alloc`) so the aggregation, verification and
//! ban logic can be embedded anywhere. File formats, the CLI and threading
//! live in the companion `btard` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adversary;
pub mod audit;
pub mod crypto;
mod math;
pub mod optim;
pub mod protocol;
pub mod reputation;
pub mod robustagg;
pub mod simnet;
pub mod vecmath;

pub use crypto::{Digest, HashMode};
pub use protocol::PeerId;
pub use vecmath::{GradientVector, PartitionLayout, SeededStream};
