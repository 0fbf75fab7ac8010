use serde::{Deserialize, Serialize};

use super::{DirectiveEvent, DirectiveSource, RunConfig};
use crate::error::Result;
use crate::instruction::{Classification, Directive};
use crate::policy::{apply_override, log_density, sample_action, PolicyParams};
use crate::reward::{attribute_step, relabel, reward, update_beta, FactorTriple, RewardWeights};
use crate::rng::RngStream;
use crate::sim::{Env, FeatureVector, WorldState, DT};
use crate::trajectory::{Trajectory, TrajectoryStep};

/// What a coach sees at a step boundary, before the step's action is chosen.
#[derive(Clone, Copy, Debug)]
pub struct StepView<'a> {
    pub epoch: usize,
    pub episode: usize,
    /// Index of the step about to be taken (equals steps already taken).
    pub step: usize,
    pub world: &'a WorldState,
    pub features: &'a FeatureVector,
    pub last: Option<&'a TrajectoryStep>,
    pub episode_return: f64,
    pub beta: RewardWeights,
    /// Whether the scripted coach may speak in this epoch.
    pub coach_active: bool,
    /// The boundary after the final step; only human rewards take effect.
    pub post_terminal: bool,
}

/// An instruction handed to the trainer, already classified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incoming {
    pub text: String,
    pub classification: Classification,
    pub directive: Directive,
    pub source: DirectiveSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_latency_ms: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Boundary {
    pub incoming: Vec<Incoming>,
    /// Stop training at this boundary.
    pub stop: bool,
}

/// Source of instructions: nothing, the scripted coach, or a live session.
pub trait CoachSource {
    fn episode_start(&mut self, _epoch: usize, _episode: usize) {}
    fn boundary(&mut self, view: &StepView) -> Boundary;
    fn epoch_end(&mut self, _metrics: &super::EpochMetrics) {}
    fn finished(&mut self) {}
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoCoach;

impl CoachSource for NoCoach {
    fn boundary(&mut self, _view: &StepView) -> Boundary {
        Boundary::default()
    }
}

/// A weight update caused by one human reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaUpdate {
    pub epoch: usize,
    pub episode: usize,
    pub arrival_step: usize,
    pub attributed_step: usize,
    pub r_h: f64,
    pub factors: FactorTriple,
    pub before: RewardWeights,
    pub after: RewardWeights,
    /// Inclusive range of relabeled steps.
    pub relabeled: (usize, usize),
}

pub struct EpisodeSpec<'a> {
    pub env: &'a Env,
    pub params: &'a PolicyParams,
    pub config: &'a RunConfig,
    pub epoch: usize,
    pub episode: usize,
    pub seed: u64,
    pub coach_active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub events: Vec<DirectiveEvent>,
    pub beta_updates: Vec<BetaUpdate>,
    pub beta_start: RewardWeights,
    pub beta_end: RewardWeights,
    pub success: bool,
    /// A stop request cut the episode short.
    pub stopped: bool,
}

struct ActiveOverride {
    directive: Directive,
    remaining: usize,
}

/// Rolls out one episode, applying directives at step boundaries.
///
/// Per step: collect instructions, sample an action, replace it while an
/// override window is open, step the world, and score the new state under
/// the current weights. A human reward arriving at boundary `t` updates the
/// weights from the factors of step `max(t - offset, 0)` and relabels steps
/// from there through `t - 1`; step `t` onward uses the new weights.
pub fn run_episode(
    spec: &EpisodeSpec,
    beta: &mut RewardWeights,
    coach: &mut dyn CoachSource,
    policy_rng: &mut RngStream,
) -> Result<EpisodeOutcome> {
    let cfg = spec.config;
    let env = spec.env;
    let horizon = cfg.horizon();
    let beta_start = *beta;
    let mut world = env.reset(spec.seed);
    let mut features = env.features(&world);
    let mut traj = Trajectory::default();
    let mut events = Vec::new();
    let mut beta_updates = Vec::new();
    let mut active: Option<ActiveOverride> = None;
    let mut episode_return = 0.0;
    let mut stopped = false;

    loop {
        let t = traj.len();
        let post_terminal = world.terminal.is_some() || t >= horizon;
        let view = StepView {
            epoch: spec.epoch,
            episode: spec.episode,
            step: t,
            world: &world,
            features: &features,
            last: traj.steps.last(),
            episode_return,
            beta: *beta,
            coach_active: spec.coach_active,
            post_terminal,
        };
        let boundary = coach.boundary(&view);
        for inc in boundary.incoming {
            let mut event = DirectiveEvent {
                directive: inc.directive,
                class: inc.classification.class,
                confidence: inc.classification.confidence,
                source: inc.source,
                arrival_step: t,
                arrival_epoch: spec.epoch,
                episode: spec.episode,
                raw_text: inc.text,
                attributed_step: None,
                client_latency_ms: inc.client_latency_ms,
            };
            match inc.directive {
                Directive::ActionOverride { .. } if !post_terminal => {
                    // A newer override cancels the active one.
                    let steps = cfg.override_steps();
                    active = (steps > 0).then_some(ActiveOverride {
                        directive: inc.directive,
                        remaining: steps,
                    });
                }
                Directive::HumanReward { reward: r_h } if t > 0 => {
                    let prev = attribute_step(t, &cfg.latency);
                    let factors = traj.steps[prev].factors;
                    let before = *beta;
                    *beta = update_beta(&before, &factors, r_h, cfg.beta_lr);
                    relabel(&mut traj, beta, prev, t - 1, &cfg.reward)?;
                    episode_return = traj.total_reward();
                    event.attributed_step = Some(prev);
                    beta_updates.push(BetaUpdate {
                        epoch: spec.epoch,
                        episode: spec.episode,
                        arrival_step: t,
                        attributed_step: prev,
                        r_h,
                        factors,
                        before,
                        after: *beta,
                        relabeled: (prev, t - 1),
                    });
                }
                _ => {}
            }
            events.push(event);
        }
        if boundary.stop {
            stopped = true;
            break;
        }
        if post_terminal {
            break;
        }

        let sampled = sample_action(spec.params, &features, policy_rng)?;
        let (action, raw_action, log_density_old, was_override) = match active.as_mut() {
            Some(o) => {
                let a = apply_override(sampled.action, &o.directive);
                o.remaining -= 1;
                (a, a.as_array(), log_density(spec.params, &features, &a), true)
            }
            None => (sampled.action, sampled.raw, sampled.log_density, false),
        };
        if active.as_ref().is_some_and(|o| o.remaining == 0) {
            active = None;
        }

        let out = env.step(&world, action, DT)?;
        let factors = FactorTriple::from_features(&out.features, &cfg.reward);
        let r = reward(&factors, beta, out.terminal, &cfg.reward);
        episode_return += r;
        traj.steps.push(TrajectoryStep {
            features,
            action,
            raw_action,
            was_override,
            log_density_old,
            factors,
            reward: r,
            terminal: out.terminal,
            deviation: out.features.deviation,
        });
        world = out.next;
        features = out.features;
    }

    traj.completion = env.completion(&world);
    if world.terminal.is_none() && !traj.is_empty() {
        traj.bootstrap = Some(features);
    }
    let success = !stopped && cfg.task.is_success(world.terminal);
    Ok(EpisodeOutcome {
        trajectory: traj,
        events,
        beta_updates,
        beta_start,
        beta_end: *beta,
        success,
        stopped,
    })
}
