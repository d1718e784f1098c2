//! Server-side combination of participant deltas.
//!
//! Fresh updates (staleness 0) get weight 1. Stale updates get a weight from a
//! [`ScalingRule`]; all weights are then normalized to sum to one.

mod stale_sync;

pub use stale_sync::{
    check_virtual_iterate, run_stale_synchronous, DelayModel, StaleSyncConfig, StaleSyncRun,
    VirtualIterateHistory,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model_data::ParameterVector;

/// A delta returned by a participant.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub learner_id: usize,
    pub delta: ParameterVector,
    pub origin_round: u64,
    pub arrival_round: u64,
    /// `arrival_round - origin_round`
    pub staleness: u64,
    pub samples: usize,
}

impl UpdateRecord {
    pub fn new(
        learner_id: usize,
        delta: ParameterVector,
        origin_round: u64,
        arrival_round: u64,
        samples: usize,
    ) -> Self {
        assert!(arrival_round >= origin_round, "update arrives before it was dispatched");
        Self {
            learner_id,
            delta,
            origin_round,
            arrival_round,
            staleness: arrival_round - origin_round,
            samples,
        }
    }

    pub fn is_fresh(&self) -> bool {
        self.staleness == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ScalingRule {
    /// `w = 1`
    Equal,
    /// `w = 1 / (tau + 1)`
    DynSgd,
    /// `w = exp(-(tau + 1))`
    AdaSgd,
    /// `w = (1 - beta) / (tau + 1) + beta * (1 - exp(-lambda / lambda_max))`
    Hybrid { beta: f64 },
}

impl ScalingRule {
    pub fn name(&self) -> &'static str {
        match self {
            ScalingRule::Equal => "equal",
            ScalingRule::DynSgd => "dynsgd",
            ScalingRule::AdaSgd => "adasgd",
            ScalingRule::Hybrid { .. } => "hybrid",
        }
    }

    /// Parses a rule name; `beta` is used only for `hybrid`.
    pub fn from_name(name: &str, beta: f64) -> Result<Self, Error> {
        match name {
            "equal" => Ok(Self::Equal),
            "dynsgd" => Ok(Self::DynSgd),
            "adasgd" => Ok(Self::AdaSgd),
            "hybrid" => {
                if !(0.0..=1.0).contains(&beta) {
                    return Err(Error::config(format!("beta must be in [0, 1], got {beta}")));
                }
                Ok(Self::Hybrid { beta })
            }
            other => Err(Error::config(format!(
                "unknown scaling rule {other:?}, expected equal|dynsgd|adasgd|hybrid"
            ))),
        }
    }
}

impl fmt::Display for ScalingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::from_name(s, 0.35)
    }
}

/// Bounded (`Some(h)`, accept iff staleness <= h) or unbounded staleness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalenessPolicy {
    pub threshold: Option<u64>,
    pub server_lr: f64,
}

impl Default for StalenessPolicy {
    fn default() -> Self {
        Self {
            threshold: None,
            server_lr: 1.0,
        }
    }
}

/// Unweighted mean of the deltas; `None` for an empty list.
pub fn aggregate_fresh(updates: &[UpdateRecord]) -> Option<ParameterVector> {
    let first = updates.first()?;
    let mut sum = ParameterVector::zeros(first.delta.len());
    for u in updates {
        sum.add_scaled(1.0, &u.delta);
    }
    sum.scale(1.0 / updates.len() as f64);
    Some(sum)
}

/// `x + server_lr * delta`
pub fn server_update(x: &ParameterVector, delta: &ParameterVector, server_lr: f64) -> ParameterVector {
    let mut next = x.clone();
    next.add_scaled(server_lr, delta);
    next
}

/// Deviation of a stale delta from the fresh mean:
/// `|u_F - (u_s + n_F u_F) / (n_F + 1)|^2 / |u_F|^2`, or 0 when `|u_F| = 0`.
pub fn deviation_score(fresh_mean: &ParameterVector, n_fresh: usize, stale_delta: &ParameterVector) -> f64 {
    let denom = fresh_mean.norm_sq();
    if denom == 0.0 {
        return 0.0;
    }
    let nf = n_fresh as f64;
    let num: f64 = fresh_mean
        .values()
        .iter()
        .zip(stale_delta.values())
        .map(|(&f, &s)| {
            let d = f - (s + nf * f) / (nf + 1.0);
            d * d
        })
        .sum();
    num / denom
}

pub fn staleness_weight(rule: ScalingRule, tau: u64, lambda: f64, lambda_max: f64) -> f64 {
    let damp = 1.0 / (tau as f64 + 1.0);
    match rule {
        ScalingRule::Equal => 1.0,
        ScalingRule::DynSgd => damp,
        ScalingRule::AdaSgd => (-(tau as f64 + 1.0)).exp(),
        ScalingRule::Hybrid { beta } => {
            let boost = if lambda_max > 0.0 {
                1.0 - (-lambda / lambda_max).exp()
            } else {
                0.0
            };
            (1.0 - beta) * damp + beta * boost
        }
    }
}

/// Normalized coefficients for `fresh` followed by `stale`. Without fresh
/// updates the hybrid rule falls back to DynSGD. With `sample_weighted`, each
/// raw weight is multiplied by the update's sample count.
pub fn mixed_weights(
    fresh: &[UpdateRecord],
    stale: &[UpdateRecord],
    rule: ScalingRule,
    sample_weighted: bool,
) -> Vec<f64> {
    let rule = match rule {
        ScalingRule::Hybrid { .. } if fresh.is_empty() => ScalingRule::DynSgd,
        r => r,
    };
    let lambdas: Vec<f64> = match rule {
        ScalingRule::Hybrid { .. } => {
            let mean = aggregate_fresh(fresh).expect("fresh set is non-empty");
            stale
                .iter()
                .map(|s| deviation_score(&mean, fresh.len(), &s.delta))
                .collect()
        }
        _ => vec![0.0; stale.len()],
    };
    let lambda_max = lambdas.iter().copied().fold(0.0, f64::max);
    let mut w: Vec<f64> = fresh
        .iter()
        .map(|_| 1.0)
        .chain(
            stale
                .iter()
                .zip(&lambdas)
                .map(|(s, &l)| staleness_weight(rule, s.staleness, l, lambda_max)),
        )
        .collect();
    if sample_weighted {
        for (wi, u) in w.iter_mut().zip(fresh.iter().chain(stale)) {
            *wi *= u.samples as f64;
        }
    }
    let total: f64 = w.iter().sum();
    assert!(total > 0.0, "aggregation weights sum to zero");
    for wi in &mut w {
        *wi /= total;
    }
    w
}

/// Weighted combination of fresh and stale deltas; reduces to
/// [`aggregate_fresh`] when there are no stale updates. `None` if both are empty.
pub fn aggregate_mixed(
    fresh: &[UpdateRecord],
    stale: &[UpdateRecord],
    rule: ScalingRule,
) -> Option<ParameterVector> {
    aggregate_mixed_with(fresh, stale, rule, false)
}

pub fn aggregate_mixed_with(
    fresh: &[UpdateRecord],
    stale: &[UpdateRecord],
    rule: ScalingRule,
    sample_weighted: bool,
) -> Option<ParameterVector> {
    if stale.is_empty() && !sample_weighted {
        return aggregate_fresh(fresh);
    }
    let len = fresh.iter().chain(stale).next()?.delta.len();
    let weights = mixed_weights(fresh, stale, rule, sample_weighted);
    let mut out = ParameterVector::zeros(len);
    for (w, u) in weights.iter().zip(fresh.iter().chain(stale)) {
        out.add_scaled(*w, &u.delta);
    }
    Some(out)
}

/// Re-stamps each update with `current_round` and splits by the policy's
/// staleness threshold.
pub fn staleness_filter(
    updates: Vec<UpdateRecord>,
    policy: &StalenessPolicy,
    current_round: u64,
) -> (Vec<UpdateRecord>, Vec<UpdateRecord>) {
    updates
        .into_iter()
        .map(|mut u| {
            u.arrival_round = current_round.max(u.origin_round);
            u.staleness = u.arrival_round - u.origin_round;
            u
        })
        .partition(|u| policy.threshold.is_none_or(|h| u.staleness <= h))
}
