use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Cache;
use super::{compute_advantages, entropy, normalize_advantages, Hyperparams, PolicyParams, ACTION_DIM};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// One transition prepared for the update: encoded input, the action the
/// density refers to, its behavior log density, and the GAE targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub raw_action: [f64; 3],
    pub log_density_old: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// Negated mean clipped surrogate.
    pub policy: f64,
    /// Mean squared value error (before `value_coef`).
    pub value: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Full PPO loss over `batch`; when `grad` is given, its gradient with
/// respect to the flat parameter vector is written into it (overwriting).
///
/// `loss = -mean(min(eta*A, clip(eta)*A)) + c_v*mean((V-R)^2) - c_e*H`
/// with `eta = pi(a|s) / max(pi_old(a|s), floor)`.
pub fn loss_and_grad(p: &PolicyParams, batch: &[&Sample], h: &Hyperparams, grad: Option<&mut [f64]>) -> LossParts {
    let n = batch.len().max(1) as f64;
    let n_mean = p.mean.params().len();
    let n_value = p.value.params().len();
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        assert_eq!(g.len(), p.n_params());
        g.fill(0.0);
    }
    let sigma: [f64; 3] = std::array::from_fn(|k| p.log_std[k].exp());
    let log_floor = h.ratio_floor.ln();
    let (lo, hi) = (1.0 - h.clip_epsilon, 1.0 + h.clip_epsilon);

    let mut mc = Cache::default();
    let mut vc = Cache::default();
    let mut parts = LossParts::default();
    let mut g_log_std = [0.0; 3];
    for s in batch {
        let mu = p.mean.forward_cached(&s.input, &mut mc);
        let z: [f64; 3] = std::array::from_fn(|k| (s.raw_action[k] - mu[k]) / sigma[k]);
        let lp = super::gaussian_log_density(&[mu[0], mu[1], mu[2]], &p.log_std, &s.raw_action);
        let eta = (lp - s.log_density_old.max(log_floor)).exp();
        let a = s.advantage;
        let unclipped = eta * a;
        let clipped = eta.clamp(lo, hi) * a;
        let surr = unclipped.min(clipped);
        parts.policy -= surr / n;
        parts.mean_ratio += eta / n;
        if !(lo..=hi).contains(&eta) {
            parts.clip_fraction += 1.0 / n;
        }
        parts.approx_kl += (s.log_density_old - lp) / n;

        let v_out = p.value.forward_cached(&s.input, &mut vc)[0];
        let err = p.value_scale * v_out - s.ret;
        parts.value += err * err / n;

        if let Some(g) = grad.as_deref_mut() {
            let (gm, rest) = g.split_at_mut(n_mean);
            let (gv, _) = rest.split_at_mut(n_value);
            // d surr / d eta is A on the unclipped branch and 0 where the clip binds.
            let d_lp = if unclipped <= clipped { -a * eta / n } else { 0.0 };
            if d_lp != 0.0 {
                let d_mu: [f64; 3] = std::array::from_fn(|k| d_lp * z[k] / sigma[k]);
                p.mean.backward(&mc, &d_mu, gm);
                for k in 0..ACTION_DIM {
                    g_log_std[k] += d_lp * (z[k] * z[k] - 1.0);
                }
            }
            let d_v = h.value_coef * 2.0 * err * p.value_scale / n;
            p.value.backward(&vc, &[d_v], gv);
        }
    }
    parts.entropy = entropy(&p.log_std);
    parts.total = parts.policy + h.value_coef * parts.value - h.entropy_coef * parts.entropy;
    if let Some(g) = grad {
        let tail = &mut g[n_mean + n_value..];
        for k in 0..ACTION_DIM {
            tail[k] = g_log_std[k] - h.entropy_coef;
        }
    }
    parts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub samples: usize,
    pub minibatches: usize,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    /// Set when the update was aborted and parameters were left unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

/// Policy parameters together with optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoLearner {
    pub params: PolicyParams,
    pub hyper: Hyperparams,
    pub adam: Adam,
}

impl PpoLearner {
    pub fn new(params: PolicyParams, hyper: Hyperparams) -> Self {
        Self {
            params,
            hyper,
            adam: Adam::default(),
        }
    }

    /// Flattens the buffer into samples with batch-normalized advantages.
    pub fn samples(&self, buffer: &[Trajectory]) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for traj in buffer.iter().filter(|t| !t.is_empty()) {
            let (adv, ret) = compute_advantages(&self.params, traj, &self.hyper)?;
            for ((step, a), r) in traj.steps.iter().zip(adv).zip(ret) {
                out.push(Sample {
                    input: self.params.encode(&step.features),
                    raw_action: step.raw_action,
                    log_density_old: step.log_density_old,
                    advantage: a,
                    ret: r,
                });
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let mut adv: Vec<f64> = out.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        for (s, a) in out.iter_mut().zip(adv) {
            s.advantage = a;
        }
        Ok(out)
    }

    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &[Trajectory], rng: &mut R) -> Result<UpdateStats> {
        let samples = self.samples(buffer)?;
        Ok(self.update_samples(&samples, rng))
    }

    /// Runs `update_epochs` shuffled minibatch passes. A non-finite loss or
    /// gradient restores the parameters and optimizer state from before the
    /// call and reports the fault in the stats.
    pub fn update_samples<R: Rng + ?Sized>(&mut self, samples: &[Sample], rng: &mut R) -> UpdateStats {
        let h = self.hyper.clone();
        let before = (self.params.clone(), self.adam.clone());
        let mut stats = UpdateStats {
            samples: samples.len(),
            ..Default::default()
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut grad = vec![0.0; self.params.n_params()];
        let mut flat = self.params.flat();
        for _ in 0..h.update_epochs {
            order.shuffle(rng);
            for chunk in order.chunks(h.minibatch) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let parts = loss_and_grad(&self.params, &batch, &h, Some(&mut grad));
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !parts.total.is_finite() || !norm.is_finite() {
                    (self.params, self.adam) = before;
                    stats.fault = Some(format!("non-finite loss {} / grad norm {norm}", parts.total));
                    return stats;
                }
                if h.max_grad_norm > 0.0 && norm > h.max_grad_norm {
                    let k = h.max_grad_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
                self.adam.step(&mut flat, &grad, h.lr);
                self.params.set_flat(&flat);
                // set_flat clamps log_std; keep the optimizer's copy in sync.
                flat.copy_from_slice(&self.params.flat());

                stats.minibatches += 1;
                stats.mean_ratio += parts.mean_ratio;
                stats.clip_fraction += parts.clip_fraction;
                stats.policy_loss += parts.policy;
                stats.value_loss += parts.value;
                stats.entropy += parts.entropy;
                stats.approx_kl += parts.approx_kl;
                stats.grad_norm += norm;
            }
        }
        let m = stats.minibatches.max(1) as f64;
        for x in [
            &mut stats.mean_ratio,
            &mut stats.clip_fraction,
            &mut stats.policy_loss,
            &mut stats.value_loss,
            &mut stats.entropy,
            &mut stats.approx_kl,
            &mut stats.grad_norm,
        ] {
            *x /= m;
        }
        stats
    }
}

/// One PPO update with a fresh optimizer, returning the new parameters.
pub fn ppo_update<R: Rng + ?Sized>(
    buffer: &[Trajectory],
    p: &PolicyParams,
    h: &Hyperparams,
    rng: &mut R,
) -> Result<(PolicyParams, UpdateStats)> {
    let mut learner = PpoLearner::new(p.clone(), h.clone());
    let stats = learner.update(buffer, rng)?;
    Ok((learner.params, stats))
}
