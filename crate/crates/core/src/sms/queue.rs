use std::collections::VecDeque;
use std::time::Duration;

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueueKind {
    Small,
    Large,
}

impl QueueKind {
    pub fn for_size(size: u64, threshold: u64) -> QueueKind {
        if size < threshold {
            QueueKind::Small
        } else {
            QueueKind::Large
        }
    }
}

/// One connection to a function: requests are served FIFO, one at a time.
#[derive(Clone, Debug, Default)]
pub struct ConnQueue {
    busy_until: SimTime,
    /// Finish times of requests not yet completed, ascending.
    outstanding: VecDeque<SimTime>,
}

impl ConnQueue {
    fn prune(&mut self, now: SimTime) {
        while self.outstanding.front().is_some_and(|t| *t <= now) {
            self.outstanding.pop_front();
        }
    }

    pub fn depth(&mut self, now: SimTime) -> usize {
        self.prune(now);
        self.outstanding.len()
    }

    pub fn is_full(&mut self, now: SimTime, capacity: usize) -> bool {
        self.depth(now) >= capacity
    }

    /// When a request arriving at `at` would start service.
    pub fn start_time(&self, at: SimTime) -> SimTime {
        at.max(self.busy_until)
    }

    /// Books a request that starts at `start` and runs for `service`.
    pub fn book(&mut self, start: SimTime, service: Duration) -> SimTime {
        let finish = start + service;
        self.busy_until = self.busy_until.max(finish);
        self.outstanding.push_back(self.busy_until);
        self.busy_until
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }
}

/// The small/large queue pair of one function.
#[derive(Clone, Debug, Default)]
pub struct RequestQueues {
    pub small: ConnQueue,
    pub large: ConnQueue,
}

impl RequestQueues {
    pub fn get(&mut self, kind: QueueKind) -> &mut ConnQueue {
        match kind {
            QueueKind::Small => &mut self.small,
            QueueKind::Large => &mut self.large,
        }
    }
}
