//! Recorded episodes: the unit of replay, relabeling, and policy updates.

use serde::{Deserialize, Serialize};

use crate::reward::FactorTriple;
use crate::sim::{ActionCommand, FeatureVector, Terminal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Observation the action was chosen from.
    pub features: FeatureVector,
    /// Executed action: the clamped policy sample, or the coach override.
    pub action: ActionCommand,
    /// Raw pre-clamp sample the density refers to. Equals `action` for overrides.
    pub raw_action: [f64; 3],
    pub was_override: bool,
    /// Log density of `raw_action` under the behavior policy, fixed at collection.
    pub log_density_old: f64,
    /// Reward factors of the state reached by this step.
    pub factors: FactorTriple,
    pub reward: f64,
    pub terminal: Option<Terminal>,
    /// Signed lane deviation after the step, meters.
    pub deviation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Observation after the last step when the episode was cut by the
    /// horizon rather than a terminal; used to bootstrap the value target.
    pub bootstrap: Option<FeatureVector>,
    /// Lap completion at episode end, percent.
    pub completion: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn terminal(&self) -> Option<Terminal> {
        self.steps.last().and_then(|s| s.terminal)
    }

    pub fn mean_abs_deviation(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.deviation.abs()).sum::<f64>() / self.steps.len() as f64
    }

    pub fn overrides(&self) -> usize {
        self.steps.iter().filter(|s| s.was_override).count()
    }
}
