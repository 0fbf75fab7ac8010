use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{RunConfig, Task};
use crate::error::Result;
use crate::policy::PolicyParams;
use crate::reward::{reward, FactorTriple, RewardConstants, RewardWeights};
use crate::rng::RngStream;
use crate::sim::{ActionCommand, Env, FeatureVector, WorldState, DT};

/// Anything that drives the car without learning.
pub trait Controller {
    fn act(&mut self, world: &WorldState, features: &FeatureVector) -> ActionCommand;
}

impl<F: FnMut(&WorldState, &FeatureVector) -> ActionCommand> Controller for F {
    fn act(&mut self, world: &WorldState, features: &FeatureVector) -> ActionCommand {
        self(world, features)
    }
}

/// A policy with sampling switched off: it always takes the mean action.
pub struct FrozenPolicy<'a>(pub &'a PolicyParams);

impl Controller for FrozenPolicy<'_> {
    fn act(&mut self, _world: &WorldState, features: &FeatureVector) -> ActionCommand {
        self.0.mean_action(features)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub episodes: usize,
    pub successes: usize,
    /// Percent of successful episodes.
    pub success_rate: f64,
    /// Mean lap completion, percent.
    pub mean_completion: f64,
    pub mean_reward: f64,
    /// Mean over episodes of the per-episode mean |lane deviation|, meters.
    pub mean_deviation: f64,
    /// Count of episode endings by kind; "horizon" when none fired.
    pub endings: BTreeMap<String, usize>,
}

/// Runs `episodes` episodes from start states drawn from `seed`. The same
/// seed always yields the same start states.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    controller: &mut dyn Controller,
    env: &Env,
    task: Task,
    episodes: usize,
    horizon: usize,
    beta: &RewardWeights,
    constants: &RewardConstants,
    seed: u64,
) -> EvalReport {
    let mut seeds = RngStream::new(seed, "eval");
    let mut report = EvalReport {
        task,
        episodes,
        successes: 0,
        success_rate: 0.0,
        mean_completion: 0.0,
        mean_reward: 0.0,
        mean_deviation: 0.0,
        endings: BTreeMap::new(),
    };
    for _ in 0..episodes {
        let mut world = env.reset(seeds.next_u64());
        let mut features = env.features(&world);
        let mut total = 0.0;
        let mut dev_sum = 0.0;
        let mut steps = 0usize;
        while world.terminal.is_none() && steps < horizon {
            let action = controller.act(&world, &features);
            let out = env.step(&world, action, DT).expect("live world with positive dt");
            let factors = FactorTriple::from_features(&out.features, constants);
            total += reward(&factors, beta, out.terminal, constants);
            dev_sum += out.features.deviation.abs();
            steps += 1;
            world = out.next;
            features = out.features;
        }
        if task.is_success(world.terminal) {
            report.successes += 1;
        }
        let ending = world.terminal.map_or("horizon".to_owned(), |t| format!("{t:?}"));
        *report.endings.entry(ending).or_default() += 1;
        report.mean_completion += env.completion(&world);
        report.mean_reward += total;
        report.mean_deviation += if steps > 0 { dev_sum / steps as f64 } else { 0.0 };
    }
    if episodes > 0 {
        let n = episodes as f64;
        report.success_rate = report.successes as f64 / n * 100.0;
        report.mean_completion /= n;
        report.mean_reward /= n;
        report.mean_deviation /= n;
    }
    report
}

/// Evaluates the frozen policy on the run's task with unit reward weights.
pub fn evaluate_policy(params: &PolicyParams, config: &RunConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    let env = config.build_env()?;
    Ok(evaluate(
        &mut FrozenPolicy(params),
        &env,
        config.task,
        episodes,
        config.horizon(),
        &config.initial_beta,
        &config.reward,
        seed,
    ))
}
