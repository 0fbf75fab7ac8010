//! Gaussian driving policy, value function, and the PPO learner.
//!
//! The mean network maps encoded features to three action means (steer,
//! throttle, brake). Samples are drawn from a diagonal Gaussian and clamped
//! into action bounds for execution; densities always refer to the raw
//! pre-clamp sample, or to the override action when the coach intervened.

mod gae;
pub mod mlp;
mod ppo;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction::Directive;
use crate::sim::{ActionCommand, FeatureVector, FEATURE_DIM};

pub use gae::{compute_advantages, gae, normalize_advantages};
pub use mlp::Mlp;
pub use ppo::{loss_and_grad, ppo_update, Adam, LossParts, PpoLearner, Sample, UpdateStats};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const ACTION_DIM: usize = 3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Shape and starting point of freshly initialized networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyInit {
    pub hidden: Vec<usize>,
    pub log_std: f64,
    /// Bias of the mean network's output layer, so an untrained car already
    /// rolls forward instead of sitting still until it stalls.
    pub action_bias: [f64; 3],
    /// Scale of the mean network's output-layer weights.
    pub out_scale: f64,
}

impl Default for PolicyInit {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            log_std: -1.0,
            action_bias: [0.0, 0.5, -0.5],
            out_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub mean: Mlp,
    pub value: Mlp,
    pub log_std: [f64; 3],
    /// Value outputs are `value_scale * net(x)` so the network stays in a
    /// unit-ish range while returns are in the hundreds.
    pub value_scale: f64,
    /// Normalizer for the obstacle distance feature.
    pub obstacle_range: f64,
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, init: &PolicyInit, obstacle_range: f64, rng: &mut R) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend(&init.hidden);
        let mut mean_sizes = sizes.clone();
        mean_sizes.push(ACTION_DIM);
        let mut value_sizes = sizes;
        value_sizes.push(1);
        let mut mean = Mlp::new(&mean_sizes, init.out_scale, rng);
        mean.output_bias_mut().copy_from_slice(&init.action_bias);
        let value = Mlp::new(&value_sizes, 1.0, rng);
        let ls = init.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
        Self {
            mean,
            value,
            log_std: [ls; 3],
            value_scale: 100.0,
            obstacle_range,
        }
    }

    /// Driving policy over the standard feature encoding.
    pub fn for_features<R: Rng + ?Sized>(init: &PolicyInit, obstacle_range: f64, rng: &mut R) -> Self {
        Self::new(FEATURE_DIM, init, obstacle_range, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn encode(&self, f: &FeatureVector) -> Vec<f64> {
        f.to_input(self.obstacle_range)
    }

    /// Total trainable parameters, in flat order: mean net, value net, log_std.
    pub fn n_params(&self) -> usize {
        self.mean.params().len() + self.value.params().len() + ACTION_DIM
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(self.mean.params());
        v.extend_from_slice(self.value.params());
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let (m, rest) = flat.split_at(self.mean.params().len());
        let (v, ls) = rest.split_at(self.value.params().len());
        self.mean.params_mut().copy_from_slice(m);
        self.value.params_mut().copy_from_slice(v);
        for (dst, &src) in self.log_std.iter_mut().zip(ls) {
            *dst = src.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|x| x.is_finite())
    }

    pub fn action_mean(&self, input: &[f64]) -> [f64; 3] {
        let out = self.mean.forward(input);
        [out[0], out[1], out[2]]
    }

    pub fn value_of(&self, input: &[f64]) -> f64 {
        self.value_scale * self.value.forward(input)[0]
    }

    pub fn value_features(&self, f: &FeatureVector) -> f64 {
        self.value_of(&self.encode(f))
    }

    /// Deterministic action used for frozen-policy evaluation.
    pub fn mean_action(&self, f: &FeatureVector) -> ActionCommand {
        ActionCommand::from_array(self.action_mean(&self.encode(f)))
    }
}

/// Diagonal-Gaussian log density of `a` given mean and log standard deviations.
pub fn gaussian_log_density(mean: &[f64; 3], log_std: &[f64; 3], a: &[f64; 3]) -> f64 {
    (0..ACTION_DIM)
        .map(|i| {
            let z = (a[i] - mean[i]) * (-log_std[i]).exp();
            -0.5 * z * z - log_std[i] - HALF_LN_2PI
        })
        .sum()
}

/// Differential entropy of the policy's Gaussian.
pub fn entropy(log_std: &[f64; 3]) -> f64 {
    log_std.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    /// Executed action, the raw sample clamped into bounds.
    pub action: ActionCommand,
    pub raw: [f64; 3],
    pub log_density: f64,
}

pub fn sample_input<R: Rng + ?Sized>(p: &PolicyParams, input: &[f64], rng: &mut R) -> Result<SampledAction> {
    let mean = p.action_mean(input);
    if mean.iter().any(|m| !m.is_finite()) || p.log_std.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinitePolicy {
            log_std: p.log_std,
            features: input.to_vec(),
        });
    }
    let mut raw = [0.0; 3];
    for i in 0..ACTION_DIM {
        let eps: f64 = rng.sample(StandardNormal);
        raw[i] = mean[i] + p.log_std[i].exp() * eps;
    }
    Ok(SampledAction {
        action: ActionCommand::from_array(raw),
        raw,
        log_density: gaussian_log_density(&mean, &p.log_std, &raw),
    })
}

pub fn sample_action<R: Rng + ?Sized>(p: &PolicyParams, f: &FeatureVector, rng: &mut R) -> Result<SampledAction> {
    if !f.is_finite() {
        return Err(Error::NonFinitePolicy {
            log_std: p.log_std,
            features: p.encode(f),
        });
    }
    sample_input(p, &p.encode(f), rng)
}

pub fn log_density_input(p: &PolicyParams, input: &[f64], a: &[f64; 3]) -> f64 {
    gaussian_log_density(&p.action_mean(input), &p.log_std, a)
}

pub fn log_density(p: &PolicyParams, f: &FeatureVector, a: &ActionCommand) -> f64 {
    log_density_input(p, &p.encode(f), &a.as_array())
}

/// Replaces or adjusts components of the sampled action. Non-override
/// directives leave the action untouched.
pub fn apply_override(sampled: ActionCommand, d: &Directive) -> ActionCommand {
    let Directive::ActionOverride { action: o, .. } = d else {
        return sampled;
    };
    let mut out = sampled;
    if let Some(s) = o.steer_set {
        out.steer = s;
    }
    if let Some(dt) = o.throttle_delta {
        out.throttle += dt;
    }
    if let Some(b) = o.brake_set {
        out.brake = b;
        if b >= 1.0 {
            out.throttle = 0.0;
        }
    }
    ActionCommand::new(out.steer, out.throttle, out.brake)
}

/// Probability ratio with the behavior density floored: `new / max(old, floor)`.
pub fn ppo_ratio(new_density: f64, old_density: f64, floor: f64) -> f64 {
    new_density / old_density.max(floor)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub ratio_floor: f64,
    pub lr: f64,
    pub update_epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm clip; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            ratio_floor: 0.05,
            lr: 3e-4,
            update_epochs: 10,
            minibatch: 64,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if self.ratio_floor <= 0.0 {
            return bad("ratio_floor must be positive");
        }
        if self.clip_epsilon <= 0.0 || self.lr <= 0.0 {
            return bad("clip_epsilon and lr must be positive");
        }
        if self.update_epochs == 0 || self.minibatch == 0 {
            return bad("update_epochs and minibatch must be positive");
        }
        Ok(())
    }
}
