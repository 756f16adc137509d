use std::time::Duration;

use crate::codec::{ChunkRef, ObjectKey};
use crate::faas::DeploymentId;
use crate::time::SimTime;

/// Number of chunks to move in the next round: `fraction` of what remains,
/// rounded up, or everything once `last` is set.
pub fn round_size(remaining: usize, fraction: f64, last: bool) -> usize {
    if last || remaining == 0 {
        return remaining;
    }
    ((remaining as f64 * fraction).ceil() as usize).clamp(1, remaining)
}

/// Round sizes for moving `total` chunks with no deadline.
pub fn round_sizes(total: usize, fraction: f64) -> Vec<usize> {
    let mut left = total;
    let mut out = Vec::new();
    while left > 0 {
        let n = round_size(left, fraction, false);
        out.push(n);
        left -= n;
    }
    out
}

/// A background migration of one object into the current bucket.
#[derive(Clone, Debug)]
pub struct Migration {
    pub key: ObjectKey,
    pub started: SimTime,
    pub deadline: SimTime,
    pub remaining: Vec<ChunkRef>,
    pub moved: Vec<(ChunkRef, DeploymentId)>,
    pub rounds: Vec<usize>,
}

impl Migration {
    pub fn new(key: ObjectKey, chunks: Vec<ChunkRef>, started: SimTime, max_interval: Duration) -> Self {
        Migration { key, started, deadline: started + max_interval, remaining: chunks, moved: Vec::new(), rounds: Vec::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_rounds_for_twelve_chunks() {
        assert_eq!(round_sizes(12, 0.5), vec![6, 3, 2, 1]);
    }

    #[test]
    fn rounds_cover_everything() {
        for total in 0..200 {
            for f in [0.1, 0.25, 0.5, 0.9, 1.0] {
                let r = round_sizes(total, f);
                assert_eq!(r.iter().sum::<usize>(), total);
                assert!(r.iter().all(|n| *n >= 1));
            }
        }
    }

    #[test]
    fn last_round_takes_the_rest() {
        assert_eq!(round_size(7, 0.5, true), 7);
        assert_eq!(round_size(0, 0.5, false), 0);
    }
}
