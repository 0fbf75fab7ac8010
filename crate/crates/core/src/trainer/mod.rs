//! The training loop: rollouts with live directive injection, the replay
//! buffer, reward-weight updates from human feedback, PPO updates, metrics,
//! evaluation, and a deterministic scripted coach.

mod audit;
mod buffer;
mod coach;
mod episode;
mod eval;
mod run;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction::{Classification, Directive, InstructionClass};
use crate::policy::{Hyperparams, PolicyInit};
use crate::reward::{LatencyConfig, RewardConstants, RewardWeights};
use crate::sim::{Env, SimConfig, Terminal, Track, TrackSpec};

pub use audit::{audit_replay, recompute_rewards, AuditReport};
pub use buffer::ReplayBuffer;
pub use coach::{scripted_utterance, CoachRule, CoachRules, ScriptedCoach, ScriptedCoachState, Templates, TEMPLATES};
pub use episode::{
    run_episode, BetaUpdate, Boundary, CoachSource, EpisodeOutcome, EpisodeSpec, Incoming, NoCoach, StepView,
};
pub use eval::{evaluate, evaluate_policy, Controller, EvalReport, FrozenPolicy};
pub use run::{
    load_checkpoint, train, Checkpoint, EpochMetrics, EvalRecord, ReplayRecord, RngStates, RunArtifacts, StopReason,
    Trainer, CHECKPOINT_VERSION,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    LaneFollow,
    FullLap,
    Avoidance,
}

impl Task {
    pub fn default_horizon(self) -> usize {
        match self {
            Task::LaneFollow | Task::Avoidance => 1000,
            Task::FullLap => 3000,
        }
    }

    /// Simulator settings for the task. Lane following and full laps run on
    /// an empty road; avoidance falls back to two pedestrians and two
    /// vehicles when the base config has no actors.
    pub fn sim_config(self, base: &SimConfig) -> SimConfig {
        let mut c = base.clone();
        match self {
            Task::LaneFollow | Task::FullLap => {
                c.pedestrians = 0;
                c.vehicles = 0;
            }
            Task::Avoidance => {
                if c.pedestrians == 0 && c.vehicles == 0 {
                    c.pedestrians = 2;
                    c.vehicles = 2;
                }
            }
        }
        c
    }

    /// An episode succeeds when it ends by the horizon or a completed lap
    /// rather than a failure terminal.
    pub fn is_success(self, terminal: Option<Terminal>) -> bool {
        terminal.is_none_or(|t| !t.is_failure())
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::LaneFollow => "lane_follow",
            Task::FullLap => "full_lap",
            Task::Avoidance => "avoidance",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lane_follow" => Ok(Task::LaneFollow),
            "full_lap" => Ok(Task::FullLap),
            "avoidance" => Ok(Task::Avoidance),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoachMode {
    #[default]
    None,
    Scripted,
    Live,
}

impl fmt::Display for CoachMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoachMode::None => "none",
            CoachMode::Scripted => "scripted",
            CoachMode::Live => "live",
        })
    }
}

impl FromStr for CoachMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CoachMode::None),
            "scripted" => Ok(CoachMode::Scripted),
            "live" => Ok(CoachMode::Live),
            _ => Err(Error::Config(format!("unknown coach {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveSource {
    Scripted,
    Live,
}

/// A classified instruction as the trainer consumed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectiveEvent {
    pub directive: Directive,
    pub class: InstructionClass,
    pub confidence: f64,
    pub source: DirectiveSource,
    /// Step boundary at which the trainer dequeued the instruction.
    pub arrival_step: usize,
    pub arrival_epoch: usize,
    pub episode: usize,
    pub raw_text: String,
    /// Step whose factors drove the weight update, for human rewards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributed_step: Option<usize>,
    /// Client-to-server latency measured by the live service, ms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_latency_ms: Option<f64>,
}

impl DirectiveEvent {
    pub fn classification(&self) -> Classification {
        Classification {
            class: self.class,
            confidence: self.confidence,
        }
    }
}

/// Pacing and queue settings for live coaching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Simulation steps per wall-clock second; 0 runs unpaced.
    pub step_hz: f64,
    pub queue_capacity: usize,
    /// Hold training at its first step until a coach connects.
    pub wait_for_client: bool,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            step_hz: 10.0,
            queue_capacity: 64,
            wait_for_client: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Trajectories collected per epoch.
    pub trajectories_per_epoch: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub coach: CoachMode,
    pub coach_start_epoch: usize,
    pub buffer_capacity: usize,
    /// Steps per episode; defaults by task.
    pub horizon: Option<usize>,
    /// Built-in track name.
    pub track: String,
    /// Overrides `track` when present.
    pub custom_track: Option<TrackSpec>,
    /// Seconds an action override stays active.
    pub override_duration: f64,
    /// Step size for reward-weight regression.
    pub beta_lr: f64,
    pub initial_beta: RewardWeights,
    /// Stop once the moving-average training success over this many epochs
    /// reaches `convergence_threshold`; 0 disables.
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    /// Frozen-policy evaluation every this many epochs; 0 disables.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Evaluation success rate (percent) recorded as the run's target.
    pub eval_target: f64,
    /// Checkpoint every this many epochs (the final one is always written); 0 keeps only the final.
    pub checkpoint_every: usize,
    /// Persist every trajectory to the replay log.
    pub log_replay: bool,
    pub sim: SimConfig,
    pub reward: RewardConstants,
    pub latency: LatencyConfig,
    pub policy: PolicyInit,
    pub ppo: Hyperparams,
    pub coach_rules: CoachRules,
    pub live: LiveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::LaneFollow,
            trajectories_per_epoch: 3,
            max_epochs: 200,
            seed: 0,
            coach: CoachMode::None,
            coach_start_epoch: 15,
            buffer_capacity: 30,
            horizon: None,
            track: "desk_loop".into(),
            custom_track: None,
            override_duration: 1.0,
            beta_lr: 0.05,
            initial_beta: RewardWeights::uniform(1.0),
            convergence_window: 10,
            convergence_threshold: 0.95,
            eval_every: 0,
            eval_episodes: 100,
            eval_target: 90.0,
            checkpoint_every: 0,
            log_replay: true,
            sim: SimConfig::default(),
            reward: RewardConstants::default(),
            latency: LatencyConfig::default(),
            policy: PolicyInit::default(),
            ppo: Hyperparams::default(),
            coach_rules: CoachRules::default(),
            live: LiveConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trajectories_per_epoch == 0 {
            return bad("trajectories_per_epoch must be at least 1".into());
        }
        if self.coach_start_epoch > self.max_epochs {
            return bad(format!(
                "coach_start_epoch {} exceeds max_epochs {}",
                self.coach_start_epoch, self.max_epochs
            ));
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be at least 1".into());
        }
        if self.horizon == Some(0) {
            return bad("horizon must be at least 1".into());
        }
        if self.override_duration.is_nan()
            || self.override_duration < 0.0
            || self.beta_lr.is_nan()
            || self.beta_lr < 0.0
        {
            return bad("override_duration and beta_lr must be non-negative".into());
        }
        if self.custom_track.is_none() && TrackSpec::builtin(&self.track).is_none() {
            return bad(format!("unknown track {:?}", self.track));
        }
        if !(self.latency.lat >= 0.0 && self.latency.fps > 0.0) {
            return bad("latency needs lat >= 0 and fps > 0".into());
        }
        self.reward.validate()?;
        self.ppo.validate()?;
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| self.task.default_horizon())
    }

    pub fn track_spec(&self) -> Result<TrackSpec> {
        match &self.custom_track {
            Some(spec) => Ok(spec.clone()),
            None => {
                TrackSpec::builtin(&self.track).ok_or_else(|| Error::Config(format!("unknown track {:?}", self.track)))
            }
        }
    }

    pub fn build_env(&self) -> Result<Env> {
        Ok(Env::new(
            Track::build(self.track_spec()?)?,
            self.task.sim_config(&self.sim),
        ))
    }

    /// Steps an action override stays active.
    pub fn override_steps(&self) -> usize {
        (self.override_duration * self.latency.fps).round() as usize
    }

    /// Whether the coach may speak during `epoch` (epochs count from 1).
    /// Live coaches speak whenever they like.
    pub fn coach_active(&self, epoch: usize) -> bool {
        match self.coach {
            CoachMode::None => false,
            CoachMode::Scripted => epoch >= self.coach_start_epoch,
            CoachMode::Live => true,
        }
    }
}

#[cfg(test)]
mod tests;
