//! Stale synchronous FedAvg with a round delay, run over a fixed participant
//! set, and the virtual-iterate consistency check for constant-delay runs.

use rand::Rng;

use super::{aggregate_fresh, aggregate_mixed, server_update, ScalingRule, UpdateRecord};
use crate::error::{Error, Result};
use crate::model_data::{local_update, Dataset, ParameterVector, Shard};
use crate::rng::{derive_seed, derived_rng, stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DelayModel {
    /// Every update from round `t` is applied in round `t + tau`.
    Constant(u64),
    /// Each update's delay is uniform in `0..=max`, drawn per (round, learner).
    Bounded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaleSyncConfig {
    pub gamma: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub delay: DelayModel,
    /// Weights for mixed fresh/stale rounds under [`DelayModel::Bounded`].
    pub rule: ScalingRule,
    pub server_lr: f64,
    pub seed: u64,
}

/// Iterates `x_0..x_T` plus, per round, `(1/n) sum_i sum_k g_{t,k}^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualIterateHistory {
    pub gamma: f64,
    pub tau: u64,
    pub iterates: Vec<ParameterVector>,
    pub grad_means: Vec<ParameterVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaleSyncRun {
    pub final_params: ParameterVector,
    pub history: VirtualIterateHistory,
}

/// Every learner trains from `x_t` in every round. Updates are held back by
/// the delay model and then combined; with a constant delay all arrivals in a
/// round share the same staleness and are averaged with equal weight.
pub fn run_stale_synchronous(
    dataset: &Dataset,
    shards: &[Shard],
    x0: &ParameterVector,
    cfg: &StaleSyncConfig,
) -> Result<StaleSyncRun> {
    if shards.is_empty() {
        return Err(Error::config("stale synchronous run needs at least one learner"));
    }
    let n = shards.len();
    let rounds = cfg.rounds as u64;
    let mut x = x0.clone();
    let mut iterates = vec![x.clone()];
    let mut grad_means = Vec::with_capacity(cfg.rounds);
    // (arrival round, update)
    let mut pending: Vec<(u64, UpdateRecord)> = Vec::new();

    for t in 0..rounds {
        let mut grad_mean = ParameterVector::zeros(x.len());
        for (i, shard) in shards.iter().enumerate() {
            let seed = derive_seed(cfg.seed, &[stream::LOCAL_TRAINING, t, i as u64]);
            let up = local_update(&x, dataset, shard, cfg.gamma, cfg.local_steps, cfg.batch_size, seed)?;
            grad_mean.add_scaled(1.0, &up.grad_sum);
            let delay = match cfg.delay {
                DelayModel::Constant(tau) => tau,
                DelayModel::Bounded(max) => {
                    derived_rng(cfg.seed, &[stream::DELAYS, t, i as u64]).random_range(0..=max)
                }
            };
            pending.push((t + delay, UpdateRecord::new(i, up.delta, t, t + delay, up.samples_processed)));
        }
        grad_mean.scale(1.0 / n as f64);
        grad_means.push(grad_mean);

        let (arrived, rest): (Vec<_>, Vec<_>) = pending.into_iter().partition(|(a, _)| *a == t);
        pending = rest;
        let arrived: Vec<UpdateRecord> = arrived.into_iter().map(|(_, u)| u).collect();
        let combined = match cfg.delay {
            DelayModel::Constant(_) => aggregate_fresh(&arrived),
            DelayModel::Bounded(_) => {
                let (fresh, stale): (Vec<_>, Vec<_>) = arrived.into_iter().partition(|u| u.is_fresh());
                aggregate_mixed(&fresh, &stale, cfg.rule)
            }
        };
        if let Some(delta) = combined {
            x = server_update(&x, &delta, cfg.server_lr);
        }
        iterates.push(x.clone());
    }

    let tau = match cfg.delay {
        DelayModel::Constant(tau) => tau,
        DelayModel::Bounded(max) => max,
    };
    Ok(StaleSyncRun {
        final_params: x,
        history: VirtualIterateHistory {
            gamma: cfg.gamma,
            tau,
            iterates,
            grad_means,
        },
    })
}

/// Rebuilds the virtual iterates `x~_t = x_t - e_t`, where `e_t` is the sum of
/// the `tau` most recent not-yet-applied rounds of `gamma * grad_mean`, and
/// returns `max_t |x~_{t+1} - (x~_t - gamma * grad_mean_t)|_inf`.
pub fn check_virtual_iterate(history: &VirtualIterateHistory) -> Result<f64> {
    let t_len = history.grad_means.len();
    if history.iterates.len() != t_len + 1 {
        return Err(Error::Diagnostic(format!(
            "history has {} iterates for {} rounds of gradients",
            history.iterates.len(),
            t_len
        )));
    }
    let d = history.iterates[0].len();
    if history
        .iterates
        .iter()
        .chain(&history.grad_means)
        .any(|v| v.len() != d)
    {
        return Err(Error::Diagnostic("inconsistent vector lengths in history".into()));
    }
    let gamma = history.gamma;
    let tau = history.tau as usize;
    let error_at = |t: usize| {
        let mut e = ParameterVector::zeros(d);
        for j in 1..=tau.min(t) {
            e.add_scaled(gamma, &history.grad_means[t - j]);
        }
        e
    };
    let mut worst: f64 = 0.0;
    for t in 0..t_len {
        let virt_t = history.iterates[t].sub(&error_at(t));
        let virt_next = history.iterates[t + 1].sub(&error_at(t + 1));
        let mut predicted = virt_t;
        predicted.add_scaled(-gamma, &history.grad_means[t]);
        worst = worst.max(virt_next.max_abs_diff(&predicted));
    }
    Ok(worst)
}
