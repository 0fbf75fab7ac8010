use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::coach::ScriptedCoach;
use super::episode::{run_episode, BetaUpdate, CoachSource, EpisodeOutcome, EpisodeSpec, NoCoach};
use super::eval::{evaluate, EvalReport, FrozenPolicy};
use super::{CoachMode, DirectiveEvent, ReplayBuffer, RunConfig};
use crate::error::{Error, Result};
use crate::instruction::Directive;
use crate::jsonl::JsonlWriter;
use crate::policy::{PolicyParams, PpoLearner, UpdateStats};
use crate::reward::RewardWeights;
use crate::rng::RngStream;
use crate::sim::Env;
use crate::trajectory::Trajectory;

pub const CHECKPOINT_VERSION: u32 = 1;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Counts from 1.
    pub epoch: usize,
    pub episodes: usize,
    pub steps: usize,
    /// Mean episode return G.
    pub cumulative_reward: f64,
    /// Mean lap completion P, percent.
    pub completion: f64,
    /// Mean over episodes of mean |lane deviation|, meters.
    pub avg_deviation: f64,
    /// Every episode of the epoch succeeded.
    pub success: bool,
    /// Fraction of successful episodes.
    pub success_rate: f64,
    /// Weights after the epoch's last human reward.
    pub beta: RewardWeights,
    /// Action overrides that took effect.
    pub n_overrides: usize,
    /// Human rewards that updated the weights.
    pub n_rewards: usize,
    /// Steps executed under an override.
    pub override_steps: usize,
    pub buffer_len: usize,
    pub update: UpdateStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_success_rate: Option<f64>,
}

impl EpochMetrics {
    /// The episode-derived fields, computed from outcomes in collection order.
    pub fn from_episodes<'a>(
        epoch: usize,
        episodes: impl IntoIterator<Item = (&'a Trajectory, &'a [DirectiveEvent], usize, bool)>,
        beta: RewardWeights,
    ) -> Self {
        let mut m = EpochMetrics {
            epoch,
            episodes: 0,
            steps: 0,
            cumulative_reward: 0.0,
            completion: 0.0,
            avg_deviation: 0.0,
            success: true,
            success_rate: 0.0,
            beta,
            n_overrides: 0,
            n_rewards: 0,
            override_steps: 0,
            buffer_len: 0,
            update: UpdateStats::default(),
            eval_success_rate: None,
        };
        let mut successes = 0usize;
        for (traj, events, n_rewards, success) in episodes {
            m.episodes += 1;
            m.steps += traj.len();
            m.cumulative_reward += traj.total_reward();
            m.completion += traj.completion;
            m.avg_deviation += traj.mean_abs_deviation();
            m.n_overrides += events
                .iter()
                .filter(|e| matches!(e.directive, Directive::ActionOverride { .. }) && e.arrival_step < traj.len())
                .count();
            m.n_rewards += n_rewards;
            m.override_steps += traj.overrides();
            successes += usize::from(success);
            m.success &= success;
        }
        if m.episodes > 0 {
            let n = m.episodes as f64;
            m.cumulative_reward /= n;
            m.completion /= n;
            m.avg_deviation /= n;
            m.success_rate = successes as f64 / n;
        } else {
            m.success = false;
        }
        m
    }
}

/// One line of the replay log: an episode exactly as collected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub epoch: usize,
    pub episode: usize,
    pub seed: u64,
    pub success: bool,
    pub beta_start: RewardWeights,
    pub beta_end: RewardWeights,
    pub trajectory: Trajectory,
    pub events: Vec<DirectiveEvent>,
    pub beta_updates: Vec<BetaUpdate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Converged,
    Stopped,
    NonFinite(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngStates {
    pub env: RngStream,
    pub policy: RngStream,
    pub update: RngStream,
}

/// Everything needed to evaluate or inspect a trained policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: usize,
    pub config: RunConfig,
    pub learner: PpoLearner,
    pub beta: RewardWeights,
    pub rng: RngStates,
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(CHECKPOINT_VERSION)) {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
        )));
    }
    Ok(serde_json::from_value(value)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub run_dir: Option<PathBuf>,
    pub metrics: Vec<EpochMetrics>,
    pub evals: Vec<EvalRecord>,
    pub params: PolicyParams,
    pub beta: RewardWeights,
    pub stop: StopReason,
    /// First evaluated epoch reaching `eval_target`.
    pub epochs_to_target: Option<usize>,
}

type Log = JsonlWriter<BufWriter<File>>;

struct RunLogs {
    dir: PathBuf,
    metrics: Log,
    instructions: Log,
    beta_updates: Log,
    evals: Log,
    replay: Option<Log>,
}

impl RunLogs {
    fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        std::fs::write(dir.join("config.toml"), config.to_toml())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: JsonlWriter::create(dir.join("metrics.jsonl"))?,
            instructions: JsonlWriter::create(dir.join("instructions.jsonl"))?,
            beta_updates: JsonlWriter::create(dir.join("beta_updates.jsonl"))?,
            evals: JsonlWriter::create(dir.join("eval.jsonl"))?,
            replay: if config.log_replay {
                Some(JsonlWriter::create(dir.join("replay.jsonl"))?)
            } else {
                None
            },
        })
    }

    fn episode(&mut self, record: &ReplayRecord) -> Result<()> {
        for e in &record.events {
            self.instructions.write(e)?;
        }
        for u in &record.beta_updates {
            self.beta_updates.write(u)?;
        }
        if let Some(r) = &mut self.replay {
            r.write(record)?;
        }
        self.instructions.flush()?;
        self.beta_updates.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush()?;
        self.evals.flush()?;
        if let Some(r) = &mut self.replay {
            r.flush()?;
        }
        Ok(())
    }
}

/// Training state. Drive it with [`Trainer::run`] or epoch by epoch.
pub struct Trainer {
    config: RunConfig,
    env: Env,
    learner: PpoLearner,
    beta: RewardWeights,
    buffer: ReplayBuffer,
    env_rng: RngStream,
    policy_rng: RngStream,
    update_rng: RngStream,
    coach: Box<dyn CoachSource + Send>,
    epoch: usize,
    metrics: Vec<EpochMetrics>,
    evals: Vec<EvalRecord>,
    logs: Option<RunLogs>,
    stop: Option<StopReason>,
}

impl Trainer {
    /// Sets up a run; with `run_dir`, logs and checkpoints are written there.
    /// Live runs start with no coach until [`Trainer::set_coach`] is called.
    pub fn new(config: RunConfig, run_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let env = config.build_env()?;
        let seed = config.seed;
        let mut init_rng = RngStream::new(seed, "init");
        let params = PolicyParams::for_features(&config.policy, env.config().obstacle_range, &mut init_rng);
        let coach: Box<dyn CoachSource + Send> = match config.coach {
            CoachMode::Scripted => Box::new(ScriptedCoach::new(
                config.coach_rules.clone(),
                config.override_duration,
                RngStream::new(seed, "coach"),
            )),
            CoachMode::None | CoachMode::Live => Box::new(NoCoach),
        };
        let logs = run_dir.map(|d| RunLogs::create(d, &config)).transpose()?;
        Ok(Self {
            learner: PpoLearner::new(params, config.ppo.clone()),
            beta: config.initial_beta,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            env_rng: RngStream::new(seed, "env"),
            policy_rng: RngStream::new(seed, "policy"),
            update_rng: RngStream::new(seed, "update"),
            coach,
            epoch: 0,
            metrics: Vec::new(),
            evals: Vec::new(),
            logs,
            stop: None,
            config,
            env,
        })
    }

    pub fn set_coach(&mut self, coach: Box<dyn CoachSource + Send>) {
        self.coach = coach;
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn params(&self) -> &PolicyParams {
        &self.learner.params
    }

    pub fn beta(&self) -> RewardWeights {
        self.beta
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.metrics
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn stop_reason(&self) -> Option<&StopReason> {
        self.stop.as_ref()
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.logs.as_ref().map(|l| l.dir.as_path())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            config: self.config.clone(),
            learner: self.learner.clone(),
            beta: self.beta,
            rng: RngStates {
                env: self.env_rng.clone(),
                policy: self.policy_rng.clone(),
                update: self.update_rng.clone(),
            },
        }
    }

    fn write_checkpoint(&self, name: &str) -> Result<()> {
        if let Some(logs) = &self.logs {
            let path = logs.dir.join("checkpoints").join(name);
            std::fs::write(path, serde_json::to_string(&self.checkpoint())?)?;
        }
        Ok(())
    }

    /// Collects one epoch of trajectories, updates the policy, and logs.
    /// Returns `None` once training has stopped.
    pub fn run_epoch(&mut self) -> Result<Option<EpochMetrics>> {
        if self.stop.is_some() {
            return Ok(None);
        }
        if self.epoch >= self.config.max_epochs {
            self.stop = Some(StopReason::MaxEpochs);
            return Ok(None);
        }
        let epoch = self.epoch + 1;
        let coach_active = self.config.coach_active(epoch);
        let mut outcomes: Vec<EpisodeOutcome> = Vec::with_capacity(self.config.trajectories_per_epoch);
        for episode in 0..self.config.trajectories_per_epoch {
            let seed = self.env_rng.next_u64();
            self.coach.episode_start(epoch, episode);
            let spec = EpisodeSpec {
                env: &self.env,
                params: &self.learner.params,
                config: &self.config,
                epoch,
                episode,
                seed,
                coach_active,
            };
            let outcome = match run_episode(&spec, &mut self.beta, self.coach.as_mut(), &mut self.policy_rng) {
                Ok(o) => o,
                Err(e @ Error::NonFinitePolicy { .. }) => {
                    warn!(epoch, episode, error = %e, "halting on non-finite policy output");
                    self.halt(StopReason::NonFinite(e.to_string()))?;
                    return Ok(None);
                }
                Err(e) => {
                    warn!(epoch, episode, error = %e, "episode aborted by environment fault");
                    continue;
                }
            };
            let record = ReplayRecord {
                epoch,
                episode,
                seed,
                success: outcome.success,
                beta_start: outcome.beta_start,
                beta_end: outcome.beta_end,
                trajectory: outcome.trajectory.clone(),
                events: outcome.events.clone(),
                beta_updates: outcome.beta_updates.clone(),
            };
            if let Some(logs) = &mut self.logs {
                logs.episode(&record)?;
            }
            let stopped = outcome.stopped;
            if !stopped && !outcome.trajectory.is_empty() {
                outcomes.push(outcome);
            }
            if stopped {
                self.halt(StopReason::Stopped)?;
                return Ok(None);
            }
        }

        let mut metrics = EpochMetrics::from_episodes(
            epoch,
            outcomes
                .iter()
                .map(|o| (&o.trajectory, o.events.as_slice(), o.beta_updates.len(), o.success)),
            self.beta,
        );
        for o in outcomes {
            self.buffer.push(o.trajectory);
        }
        metrics.buffer_len = self.buffer.len();

        if !self.buffer.is_empty() {
            self.buffer.relabel_all(&self.beta, &self.config.reward);
            let stats = self.learner.update(&self.buffer.to_vec(), &mut self.update_rng)?;
            if let Some(fault) = &stats.fault {
                warn!(epoch, fault, "update aborted; keeping last good parameters");
                metrics.update = stats.clone();
                self.record_metrics(metrics)?;
                self.halt(StopReason::NonFinite(fault.clone()))?;
                return Ok(None);
            }
            metrics.update = stats;
        }
        self.epoch = epoch;

        let due = self.config.eval_every > 0
            && (epoch.is_multiple_of(self.config.eval_every) || epoch == self.config.max_epochs);
        if due {
            let report = evaluate(
                &mut FrozenPolicy(&self.learner.params),
                &self.env,
                self.config.task,
                self.config.eval_episodes,
                self.config.horizon(),
                &self.config.initial_beta,
                &self.config.reward,
                self.config.seed,
            );
            metrics.eval_success_rate = Some(report.success_rate);
            let record = EvalRecord { epoch, report };
            if let Some(logs) = &mut self.logs {
                logs.evals.write(&record)?;
            }
            self.evals.push(record);
        }

        info!(
            epoch,
            reward = metrics.cumulative_reward,
            completion = metrics.completion,
            deviation = metrics.avg_deviation,
            success_rate = metrics.success_rate,
            eval = ?metrics.eval_success_rate,
            "epoch done"
        );
        self.record_metrics(metrics.clone())?;
        self.coach.epoch_end(&metrics);
        if self.config.checkpoint_every > 0 && epoch.is_multiple_of(self.config.checkpoint_every) {
            self.write_checkpoint(&format!("epoch_{epoch:04}.json"))?;
        }

        if self.converged() {
            self.halt(StopReason::Converged)?;
        } else if epoch >= self.config.max_epochs {
            self.halt(StopReason::MaxEpochs)?;
        }
        Ok(Some(metrics))
    }

    fn record_metrics(&mut self, metrics: EpochMetrics) -> Result<()> {
        if let Some(logs) = &mut self.logs {
            logs.metrics.write(&metrics)?;
            logs.flush()?;
        }
        self.metrics.push(metrics);
        Ok(())
    }

    fn converged(&self) -> bool {
        let w = self.config.convergence_window;
        if w == 0 || self.metrics.len() < w {
            return false;
        }
        let recent = &self.metrics[self.metrics.len() - w..];
        recent.iter().map(|m| m.success_rate).sum::<f64>() / w as f64 >= self.config.convergence_threshold
    }

    fn halt(&mut self, reason: StopReason) -> Result<()> {
        info!(epoch = self.epoch, ?reason, "training stopped");
        self.stop = Some(reason);
        if let Some(logs) = &mut self.logs {
            logs.flush()?;
        }
        self.write_checkpoint("final.json")?;
        self.coach.finished();
        Ok(())
    }

    pub fn run(mut self) -> Result<RunArtifacts> {
        while self.run_epoch()?.is_some() {}
        Ok(self.into_artifacts())
    }

    pub fn into_artifacts(self) -> RunArtifacts {
        let target = self.config.eval_target;
        RunArtifacts {
            run_dir: self.logs.as_ref().map(|l| l.dir.clone()),
            epochs_to_target: self
                .evals
                .iter()
                .find(|e| e.report.success_rate >= target)
                .map(|e| e.epoch),
            metrics: self.metrics,
            evals: self.evals,
            params: self.learner.params,
            beta: self.beta,
            stop: self.stop.unwrap_or(StopReason::MaxEpochs),
        }
    }
}

/// Runs a full training session.
pub fn train(config: RunConfig, run_dir: Option<&Path>) -> Result<RunArtifacts> {
    Trainer::new(config, run_dir)?.run()
}
