//! Offline audit of a run directory.
//!
//! Rewards are recomputed from the stored factors and the instruction events
//! alone, without the trainer's relabel path, then compared bit for bit with
//! what was logged. Epoch metrics are recomputed from the replay records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{EpochMetrics, ReplayRecord};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::instruction::Directive;
use crate::jsonl::read_file;
use crate::reward::{reward, update_beta, RewardWeights};

/// Rewards of one episode as they should have been logged, plus the weights
/// after its last human reward.
///
/// Steps are scored under the weights in force when they were taken; a human
/// reward dequeued at boundary `t` moves the weights using the factors of the
/// attributed step and rescoring covers the attributed step through `t - 1`.
pub fn recompute_rewards(record: &ReplayRecord, config: &RunConfig) -> (Vec<f64>, RewardWeights) {
    let steps = &record.trajectory.steps;
    let offset = (config.latency.lat * config.latency.fps).round() as usize;
    let mut beta = record.beta_start;
    let mut rewards = vec![0.0; steps.len()];
    let score = |i: usize, b: &RewardWeights| reward(&steps[i].factors, b, steps[i].terminal, &config.reward);
    let mut events = record.events.iter().peekable();
    for t in 0..=steps.len() {
        while let Some(e) = events.next_if(|e| e.arrival_step == t) {
            if let Directive::HumanReward { reward: r_h } = e.directive {
                if t == 0 {
                    continue;
                }
                let prev = t.saturating_sub(offset);
                beta = update_beta(&beta, &steps[prev].factors, r_h, config.beta_lr);
                for (i, r) in rewards.iter_mut().enumerate().take(t).skip(prev) {
                    *r = score(i, &beta);
                }
            }
        }
        if t < steps.len() {
            rewards[t] = score(t, &beta);
        }
    }
    (rewards, beta)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub episodes: usize,
    pub steps: usize,
    pub beta_updates: usize,
    pub epochs_checked: usize,
    /// Human-readable description of every mismatch found.
    pub mismatches: Vec<String>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recomputes a run directory's rewards, weight updates and epoch metrics.
pub fn audit_replay(run_dir: &Path) -> Result<AuditReport> {
    let config = RunConfig::load(run_dir.join("config.toml"))?;
    let replay_path = run_dir.join("replay.jsonl");
    if !replay_path.exists() {
        return Err(Error::Config(format!("{} has no replay log", run_dir.display())));
    }
    let records: Vec<ReplayRecord> = read_file(&replay_path)?;
    let metrics: Vec<EpochMetrics> = read_file(run_dir.join("metrics.jsonl"))?;
    let mut report = AuditReport::default();

    for rec in &records {
        report.episodes += 1;
        report.steps += rec.trajectory.len();
        report.beta_updates += rec.beta_updates.len();
        let (rewards, beta) = recompute_rewards(rec, &config);
        for (i, (want, step)) in rewards.iter().zip(&rec.trajectory.steps).enumerate() {
            if want.to_bits() != step.reward.to_bits() {
                report.mismatches.push(format!(
                    "epoch {} episode {} step {i}: logged reward {} recomputed {want}",
                    rec.epoch, rec.episode, step.reward
                ));
            }
        }
        if beta != rec.beta_end {
            report.mismatches.push(format!(
                "epoch {} episode {}: logged weights {:?} recomputed {beta:?}",
                rec.epoch, rec.episode, rec.beta_end
            ));
        }
        let applied = rec
            .events
            .iter()
            .filter(|e| matches!(e.directive, Directive::HumanReward { .. }) && e.arrival_step > 0)
            .count();
        if applied != rec.beta_updates.len() {
            report.mismatches.push(format!(
                "epoch {} episode {}: {applied} human rewards but {} weight updates",
                rec.epoch,
                rec.episode,
                rec.beta_updates.len()
            ));
        }
    }

    let mut by_epoch: BTreeMap<usize, Vec<&ReplayRecord>> = BTreeMap::new();
    for rec in records.iter().filter(|r| !r.trajectory.is_empty()) {
        by_epoch.entry(rec.epoch).or_default().push(rec);
    }
    for logged in &metrics {
        let Some(recs) = by_epoch.get(&logged.epoch) else {
            report
                .mismatches
                .push(format!("epoch {}: no replay records", logged.epoch));
            continue;
        };
        let beta = recs.last().map_or(logged.beta, |r| r.beta_end);
        let recomputed = EpochMetrics::from_episodes(
            logged.epoch,
            recs.iter()
                .map(|r| (&r.trajectory, r.events.as_slice(), r.beta_updates.len(), r.success)),
            beta,
        );
        let fields = [
            ("episodes", logged.episodes == recomputed.episodes),
            ("steps", logged.steps == recomputed.steps),
            (
                "cumulative_reward",
                logged.cumulative_reward == recomputed.cumulative_reward,
            ),
            ("completion", logged.completion == recomputed.completion),
            ("avg_deviation", logged.avg_deviation == recomputed.avg_deviation),
            ("success", logged.success == recomputed.success),
            ("success_rate", logged.success_rate == recomputed.success_rate),
            ("beta", logged.beta == recomputed.beta),
            ("n_overrides", logged.n_overrides == recomputed.n_overrides),
            ("n_rewards", logged.n_rewards == recomputed.n_rewards),
            ("override_steps", logged.override_steps == recomputed.override_steps),
        ];
        for (name, same) in fields {
            if !same {
                report
                    .mismatches
                    .push(format!("epoch {}: {name} differs from replay", logged.epoch));
            }
        }
        report.epochs_checked += 1;
    }
    Ok(report)
}
