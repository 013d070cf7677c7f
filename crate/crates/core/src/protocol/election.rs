//! Validator election from the shared random output.

use alloc::vec::Vec;

use super::PeerId;
use crate::vecmath::SeededStream;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Election {
    /// `(checker, target)`; checkers sit out the next gradient step.
    pub pairs: Vec<(PeerId, PeerId)>,
    /// Number of pairs drawn; below the requested count when the pool has
    /// fewer than `2m` peers.
    pub drawn: usize,
}

impl Election {
    pub fn checkers(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    pub fn is_checker(&self, p: PeerId) -> bool {
        self.pairs.iter().any(|&(c, _)| c == p)
    }
}

/// Draws `2m` distinct peers from `pool` (ascending ids) without replacement:
/// the first `m` check the last `m`, pairwise. `m` shrinks to `|pool| / 2`.
pub fn elect_validators(seed: u64, pool: &[PeerId], m: usize) -> Election {
    let m = m.min(pool.len() / 2);
    let mut pool = pool.to_vec();
    pool.sort_unstable();
    let mut rng = SeededStream::new(seed);
    for i in 0..2 * m {
        let k = i + rng.next_below((pool.len() - i) as u64) as usize;
        pool.swap(i, k);
    }
    let pairs = (0..m).map(|i| (pool[i], pool[m + i])).collect();
    Election { pairs, drawn: m }
}
