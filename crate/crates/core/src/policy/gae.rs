use super::{Hyperparams, PolicyParams};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Generalized advantage estimates and lambda-returns.
///
/// `values[t]` is V(s_t); `last_value` is the value after the final step
/// (zero when the episode terminated). Returns are `advantage + value`, which
/// reduce to discounted returns when lambda is 1.
pub fn gae(rewards: &[f64], values: &[f64], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Raw (unnormalized) advantages and returns for one trajectory under the
/// current value network. Episodes cut by the horizon bootstrap from the
/// value of the observation after the last step.
pub fn compute_advantages(p: &PolicyParams, traj: &Trajectory, h: &Hyperparams) -> Result<(Vec<f64>, Vec<f64>)> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = traj.steps.iter().map(|s| p.value_features(&s.features)).collect();
    let last = match (&traj.bootstrap, traj.terminal()) {
        (Some(f), None) => p.value_features(f),
        _ => 0.0,
    };
    Ok(gae(&rewards, &values, last, h.gamma, h.gae_lambda))
}

/// Shifts and scales in place to zero mean and unit variance.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv {
        *a = (*a - mean) / std;
    }
}
