use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::reward::{relabel_all, RewardConstants, RewardWeights};
use crate::trajectory::Trajectory;

/// Bounded FIFO of trajectories; the oldest is evicted first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    trajectories: VecDeque<Trajectory>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            trajectories: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Appends, returning the evicted trajectory when full.
    pub fn push(&mut self, t: Trajectory) -> Option<Trajectory> {
        let evicted = if self.trajectories.len() == self.capacity {
            self.trajectories.pop_front()
        } else {
            None
        };
        self.trajectories.push_back(t);
        evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter()
    }

    /// Recomputes every stored reward under `w`.
    pub fn relabel_all(&mut self, w: &RewardWeights, c: &RewardConstants) {
        for t in &mut self.trajectories {
            relabel_all(t, w, c);
        }
    }

    pub fn to_vec(&self) -> Vec<Trajectory> {
        self.trajectories.iter().cloned().collect()
    }
}
