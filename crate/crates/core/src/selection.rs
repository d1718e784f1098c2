//! Participant selection strategies and the adaptive participant target.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::population::Learner;
use crate::rng::rng_from;

/// What a checked-in learner reports to the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckIn {
    pub learner_id: usize,
    /// Predicted probability of staying available over `[mu_t, 2 mu_t]`.
    pub availability_prob: f64,
    /// Training loss from the learner's last participation; `None` if never selected.
    pub last_loss: Option<f64>,
    /// Expected compute + communication time for one round of work.
    pub expected_completion: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionDecision {
    pub participants: Vec<usize>,
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Random,
    Priority,
    Utility,
    /// SAFA-style: every checked-in learner participates.
    All,
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "random" => Ok(Self::Random),
            "priority" => Ok(Self::Priority),
            "utility" => Ok(Self::Utility),
            "all" => Ok(Self::All),
            other => Err(Error::config(format!(
                "unknown selector {other:?}, expected random|priority|utility|all"
            ))),
        }
    }
}

/// Partial Fisher-Yates: the first `n` entries of `ids` become a uniform sample.
fn sample_ids<R: Rng>(ids: &mut [usize], n: usize, rng: &mut R) -> Vec<usize> {
    let n = n.min(ids.len());
    for i in 0..n {
        let j = rng.random_range(i..ids.len());
        ids.swap(i, j);
    }
    ids[..n].to_vec()
}

/// `min(n, |pool|)` learners drawn uniformly without replacement.
pub fn select_random(pool: &[CheckIn], n: usize, seed: u64) -> SelectionDecision {
    let mut ids: Vec<usize> = pool.iter().map(|c| c.learner_id).collect();
    let participants = sample_ids(&mut ids, n, &mut rng_from(seed));
    SelectionDecision { participants, target: n }
}

/// Least-available-first: ascending availability probability, ties shuffled,
/// first `min(n_target, |pool|)` returned.
pub fn select_priority(pool: &[CheckIn], n_target: usize, seed: u64) -> SelectionDecision {
    let mut ranked: Vec<CheckIn> = pool.to_vec();
    ranked.sort_by(|a, b| {
        a.availability_prob
            .total_cmp(&b.availability_prob)
            .then(a.learner_id.cmp(&b.learner_id))
    });
    let mut rng = rng_from(seed);
    let mut start = 0;
    while start < ranked.len() {
        let p = ranked[start].availability_prob;
        let end = start + ranked[start..].iter().take_while(|c| c.availability_prob == p).count();
        if end - start > 1 {
            ranked[start..end].shuffle(&mut rng);
        }
        start = end;
    }
    SelectionDecision {
        participants: ranked.iter().take(n_target).map(|c| c.learner_id).collect(),
        target: n_target,
    }
}

/// Oort-style utility: `last_loss * min(1, deadline_pref / expected_completion)`.
pub fn utility_score(c: &CheckIn, deadline_pref: f64) -> Option<f64> {
    let speed = if c.expected_completion > 0.0 {
        (deadline_pref / c.expected_completion).min(1.0)
    } else {
        1.0
    };
    c.last_loss.map(|l| l * speed)
}

/// Exploits the highest-utility explored learners and explores
/// `round(exploration_fraction * n)` never-selected ones uniformly at random.
/// A shortfall on either side is filled from the other.
pub fn select_utility(
    pool: &[CheckIn],
    n: usize,
    exploration_fraction: f64,
    deadline_pref: f64,
    seed: u64,
) -> SelectionDecision {
    let n = n.min(pool.len());
    let explore_fraction = exploration_fraction.clamp(0.0, 1.0);
    let mut explored: Vec<(f64, usize)> = pool
        .iter()
        .filter_map(|c| utility_score(c, deadline_pref).map(|s| (s, c.learner_id)))
        .collect();
    explored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut fresh: Vec<usize> = pool
        .iter()
        .filter(|c| c.last_loss.is_none())
        .map(|c| c.learner_id)
        .collect();

    let want_explore = (explore_fraction * n as f64).round() as usize;
    let n_explore = want_explore.max(n.saturating_sub(explored.len())).min(fresh.len());
    let n_exploit = (n - n_explore).min(explored.len());

    let mut participants: Vec<usize> = explored[..n_exploit].iter().map(|&(_, id)| id).collect();
    participants.extend(sample_ids(&mut fresh, n_explore, &mut rng_from(seed)));
    SelectionDecision { participants, target: n }
}

/// Every checked-in learner, in pool order.
pub fn select_all(pool: &[CheckIn]) -> SelectionDecision {
    SelectionDecision {
        participants: pool.iter().map(|c| c.learner_id).collect(),
        target: pool.len(),
    }
}

/// `N_t = max(1, N_0 - B_t)` where `B_t` counts stragglers whose remaining
/// time is at most `mu_t`.
pub fn adaptive_participant_target(n0: usize, straggler_remaining: &[f64], mu_t: f64) -> usize {
    let b_t = straggler_remaining.iter().filter(|&&rt| rt <= mu_t).count();
    n0.saturating_sub(b_t).max(1)
}

/// Exponentially smoothed round duration `(1 - alpha) * d_prev + alpha * mu_prev`.
pub fn update_round_duration(mu_prev: f64, d_prev: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * d_prev + alpha * mu_prev
}

/// Learners allowed to check in at `current_round`.
pub fn apply_cooldown<'a>(pool: &'a [Learner], current_round: u64) -> Vec<&'a Learner> {
    pool.iter().filter(|l| l.cooldown_until <= current_round).collect()
}

/// Cooldown bookkeeping after a learner submits in `completion_round`: it is
/// barred for the next `cooldown_length` rounds.
pub fn start_cooldown(learner: &mut Learner, completion_round: u64, cooldown_length: u64) {
    learner.cooldown_until = completion_round + cooldown_length + 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_data::Shard;
    use crate::population::{AvailabilityTrace, DeviceProfile};

    fn checkin(id: usize, p: f64) -> CheckIn {
        CheckIn {
            learner_id: id,
            availability_prob: p,
            last_loss: None,
            expected_completion: 1.0,
        }
    }

    fn learner(id: usize) -> Learner {
        Learner::new(
            id,
            DeviceProfile {
                per_sample_compute_time: 0.01,
                uplink_bandwidth: 1.0,
                downlink_bandwidth: 1.0,
                cluster_id: 0,
            },
            AvailabilityTrace::always(100.0),
            Shard { owner: id, sample_indices: vec![id] },
        )
    }

    #[test]
    fn random_takes_whole_small_pool() {
        let pool: Vec<CheckIn> = (0..3).map(|i| checkin(i, 0.5)).collect();
        let mut d = select_random(&pool, 3, 1).participants;
        d.sort_unstable();
        assert_eq!(d, vec![0, 1, 2]);
    }

    #[test]
    fn random_is_deterministic() {
        let pool: Vec<CheckIn> = (0..1000).map(|i| checkin(i, 0.5)).collect();
        assert_eq!(select_random(&pool, 10, 77), select_random(&pool, 10, 77));
        assert_ne!(select_random(&pool, 10, 77), select_random(&pool, 10, 78));
    }

    #[test]
    fn priority_picks_least_available() {
        let pool = vec![checkin(0, 0.9), checkin(1, 0.1), checkin(2, 0.5)];
        assert_eq!(select_priority(&pool, 2, 0).participants, vec![1, 2]);
        assert_eq!(select_priority(&pool, 5, 0).participants.len(), 3);
        assert!(select_priority(&[], 5, 0).participants.is_empty());
    }

    #[test]
    fn utility_prefers_fast_learner_at_equal_loss() {
        let mut a = checkin(0, 0.5);
        a.last_loss = Some(1.0);
        a.expected_completion = 10.0;
        let mut b = checkin(1, 0.5);
        b.last_loss = Some(1.0);
        b.expected_completion = 100.0;
        assert_eq!(select_utility(&[a, b], 1, 0.0, 20.0, 3).participants, vec![0]);
    }

    #[test]
    fn utility_argmax_on_loss() {
        let pool: Vec<CheckIn> = [2.0, 1.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &l)| CheckIn {
                last_loss: Some(l),
                ..checkin(i, 0.5)
            })
            .collect();
        assert_eq!(select_utility(&pool, 1, 0.0, 5.0, 0).participants, vec![0]);
    }

    #[test]
    fn full_exploration_is_random_over_unexplored() {
        let pool: Vec<CheckIn> = (0..30)
            .map(|i| CheckIn {
                last_loss: (i % 3 == 0).then_some(1.0),
                ..checkin(i, 0.5)
            })
            .collect();
        let unexplored: Vec<CheckIn> = pool.iter().copied().filter(|c| c.last_loss.is_none()).collect();
        for seed in 0..20 {
            assert_eq!(
                select_utility(&pool, 6, 1.0, 5.0, seed).participants,
                select_random(&unexplored, 6, seed).participants
            );
        }
    }

    #[test]
    fn apt_examples() {
        assert_eq!(adaptive_participant_target(10, &[], 100.0), 10);
        assert_eq!(adaptive_participant_target(10, &[50.0, 120.0, 80.0], 100.0), 8);
        assert_eq!(adaptive_participant_target(2, &[1.0, 2.0, 3.0], 100.0), 1);
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(update_round_duration(80.0, 100.0, 0.25), 95.0);
        assert_eq!(update_round_duration(80.0, 100.0, 1.0), 80.0);
        assert_eq!(update_round_duration(80.0, 100.0, 0.0), 100.0);
    }

    #[test]
    fn cooldown_windows() {
        let mut pool: Vec<Learner> = (0..3).map(learner).collect();
        assert_eq!(apply_cooldown(&pool, 0).len(), 3);

        start_cooldown(&mut pool[0], 10, 5);
        for r in 11..=15 {
            assert!(apply_cooldown(&pool, r).iter().all(|l| l.id != 0), "round {r}");
        }
        assert!(apply_cooldown(&pool, 16).iter().any(|l| l.id == 0));

        start_cooldown(&mut pool[1], 10, 0);
        assert!(apply_cooldown(&pool, 11).iter().any(|l| l.id == 1));

        for l in pool.iter_mut() {
            start_cooldown(l, 3, 5);
        }
        assert!(apply_cooldown(&pool, 4).is_empty());
    }

    #[test]
    fn selector_names_parse() {
        assert_eq!("all".parse::<SelectorKind>().unwrap(), SelectorKind::All);
        assert!("oort".parse::<SelectorKind>().is_err());
    }
}
