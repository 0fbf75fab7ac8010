//! Learnable environmental reward.
//!
//! Three bounded factors (speed, lane deviation, orientation) are combined as
//! a weighted sum with weights `beta`. Terminal steps take a fixed penalty
//! instead. Human evaluative rewards nudge `beta` by one clamped gradient
//! step on the squared error at an earlier, latency-compensated step, and the
//! trajectory is relabeled under the new weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{FeatureVector, Terminal};
use crate::trajectory::Trajectory;

pub const BETA_MIN: f64 = 0.0;
pub const BETA_MAX: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConstants {
    /// km/h
    pub s_min: f64,
    pub s_target: f64,
    pub s_max: f64,
    /// meters
    pub d_max: f64,
    /// degrees
    pub a_max: f64,
    pub r_t_offtrack: f64,
    pub r_t_collision: f64,
    pub r_t_stalled: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            s_min: 10.0,
            s_target: 15.0,
            s_max: 20.0,
            d_max: 2.5,
            a_max: 20.0,
            r_t_offtrack: -50.0,
            r_t_collision: -100.0,
            r_t_stalled: 0.0,
        }
    }
}

impl RewardConstants {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.s_min && self.s_min < self.s_target && self.s_target < self.s_max) {
            return Err(Error::Config(format!(
                "reward speeds must satisfy 0 < s_min < s_target < s_max, got {} {} {}",
                self.s_min, self.s_target, self.s_max
            )));
        }
        if !(self.d_max > 0.0 && self.a_max > 0.0) {
            return Err(Error::Config("reward d_max and a_max must be positive".into()));
        }
        Ok(())
    }

    /// Fixed reward for a terminal step. Completing the lap is not penalized
    /// and is scored like any other step.
    pub fn terminal_reward(&self, terminal: Terminal) -> Option<f64> {
        match terminal {
            Terminal::OffTrack => Some(self.r_t_offtrack),
            Terminal::Collision => Some(self.r_t_collision),
            Terminal::Stalled => Some(self.r_t_stalled),
            Terminal::LapComplete => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub beta_s: f64,
    pub beta_d: f64,
    pub beta_o: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl RewardWeights {
    pub fn uniform(b: f64) -> Self {
        Self::new(b, b, b)
    }

    /// Weights clamped into `[BETA_MIN, BETA_MAX]`.
    pub fn new(beta_s: f64, beta_d: f64, beta_o: f64) -> Self {
        let c = |b: f64| b.clamp(BETA_MIN, BETA_MAX);
        Self {
            beta_s: c(beta_s),
            beta_d: c(beta_d),
            beta_o: c(beta_o),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.beta_s, self.beta_d, self.beta_o]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.beta_s * k, self.beta_d * k, self.beta_o * k)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorTriple {
    pub r_s: f64,
    pub r_d: f64,
    pub r_o: f64,
}

impl FactorTriple {
    pub fn new(r_s: f64, r_d: f64, r_o: f64) -> Self {
        Self { r_s, r_d, r_o }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r_s, self.r_d, self.r_o]
    }

    pub fn from_features(f: &FeatureVector, c: &RewardConstants) -> Self {
        Self {
            r_s: speed_factor(f.speed, c),
            r_d: deviation_factor(f.deviation.abs(), c),
            r_o: orientation_factor(f.heading_error.abs(), c),
        }
    }

    fn dot(&self, w: &RewardWeights) -> f64 {
        w.beta_s * self.r_s + w.beta_d * self.r_d + w.beta_o * self.r_o
    }
}

/// Evaluative feedback value with the step at which it was received.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanReward {
    pub value: f64,
    pub received_at_step: usize,
    pub wall_clock: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyConfig {
    /// Seconds between the event a coach reacts to and the feedback arriving.
    pub lat: f64,
    /// Steps per second.
    pub fps: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self { lat: 1.0, fps: 10.0 }
    }
}

impl LatencyConfig {
    pub fn offset_steps(&self) -> usize {
        (self.lat * self.fps).round().max(0.0) as usize
    }
}

/// Speed factor: ramps up to 1 at `s_min`, holds until `s_target`, then falls
/// linearly to 0 at `s_max`.
pub fn speed_factor(s: f64, c: &RewardConstants) -> f64 {
    let s = s.max(0.0);
    let r = if s < c.s_min {
        s / c.s_min
    } else if s < c.s_target {
        1.0
    } else {
        1.0 - (s - c.s_target) / (c.s_max - c.s_target)
    };
    r.clamp(0.0, 1.0)
}

/// `max(1 - d/d_max, 0)` for absolute lane deviation `d`.
pub fn deviation_factor(d: f64, c: &RewardConstants) -> f64 {
    (1.0 - d.abs() / c.d_max).max(0.0)
}

/// `max(1 - a/a_max, 0)` for absolute heading error `a` in degrees.
pub fn orientation_factor(a: f64, c: &RewardConstants) -> f64 {
    (1.0 - a.abs() / c.a_max).max(0.0)
}

pub fn reward(factors: &FactorTriple, w: &RewardWeights, terminal: Option<Terminal>, c: &RewardConstants) -> f64 {
    match terminal.and_then(|t| c.terminal_reward(t)) {
        Some(r_t) => r_t,
        None => factors.dot(w),
    }
}

/// Step whose reward a human signal received at step `t` refers to.
pub fn attribute_step(t: usize, lc: &LatencyConfig) -> usize {
    t.saturating_sub(lc.offset_steps())
}

/// One clamped gradient step on `(sum beta_i r_i - r_h)^2`.
pub fn update_beta(w: &RewardWeights, factors: &FactorTriple, r_h: f64, alpha: f64) -> RewardWeights {
    let e = factors.dot(w) - r_h;
    let g = 2.0 * alpha * e;
    RewardWeights::new(
        w.beta_s - g * factors.r_s,
        w.beta_d - g * factors.r_d,
        w.beta_o - g * factors.r_o,
    )
}

/// Recomputes rewards on steps `from..=to` under `w`. Terminal penalties are
/// left as they are.
pub fn relabel(traj: &mut Trajectory, w: &RewardWeights, from: usize, to: usize, c: &RewardConstants) -> Result<()> {
    let len = traj.steps.len();
    if from > to || to >= len {
        return Err(Error::RelabelRange { from, to, len });
    }
    for step in &mut traj.steps[from..=to] {
        step.reward = reward(&step.factors, w, step.terminal, c);
    }
    Ok(())
}

/// Relabels every step of a trajectory.
pub fn relabel_all(traj: &mut Trajectory, w: &RewardWeights, c: &RewardConstants) {
    if !traj.steps.is_empty() {
        let last = traj.steps.len() - 1;
        relabel(traj, w, 0, last, c).expect("full range is always valid");
    }
}
