use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// A learner's private data: indices into the global [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub owner: usize,
    pub sample_indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// How samples are spread over a label-limited learner's labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum LabelDistribution {
    Balanced,
    Uniform,
    Zipf { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSpec {
    UniformIid,
    LabelLimited {
        label_fraction: f64,
        distribution: LabelDistribution,
    },
}

impl PartitionSpec {
    fn validate(&self) -> Result<()> {
        if let PartitionSpec::LabelLimited {
            label_fraction,
            distribution,
        } = *self
        {
            if !(label_fraction > 0.0 && label_fraction <= 1.0) {
                return Err(Error::config(format!(
                    "label_fraction must be in (0, 1], got {label_fraction}"
                )));
            }
            if let LabelDistribution::Zipf { alpha } = distribution {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::config(format!("zipf alpha must be > 0, got {alpha}")));
                }
            }
        }
        Ok(())
    }
}

/// Splits `indices` (normally the training split) into one disjoint shard per
/// learner. The union of the shards is exactly `indices`.
pub fn partition(
    dataset: &Dataset,
    indices: &[usize],
    learners: usize,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<Shard>> {
    spec.validate()?;
    if learners == 0 {
        return Err(Error::config("partition needs at least one learner"));
    }
    if learners > indices.len() {
        return Err(Error::config(format!(
            "{learners} learners but only {} samples to partition",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::config(format!("sample index {bad} out of range")));
    }
    let mut rng = rng_from(seed);
    let mut shards = match *spec {
        PartitionSpec::UniformIid => {
            let mut idx = indices.to_vec();
            idx.shuffle(&mut rng);
            let quotas = equal_quotas(idx.len(), learners);
            let mut rest = idx.as_slice();
            quotas
                .into_iter()
                .enumerate()
                .map(|(owner, q)| {
                    let (head, tail) = rest.split_at(q);
                    rest = tail;
                    Shard {
                        owner,
                        sample_indices: head.to_vec(),
                    }
                })
                .collect::<Vec<_>>()
        }
        PartitionSpec::LabelLimited {
            label_fraction,
            distribution,
        } => label_limited(dataset, indices, learners, label_fraction, distribution, &mut rng)?,
    };
    for s in &mut shards {
        s.sample_indices.sort_unstable();
    }
    Ok(shards)
}

fn equal_quotas(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|j| base + usize::from(j < extra)).collect()
}

/// Splits `total` proportionally to `weights` with largest-remainder rounding.
/// Ties in the remainder go to the lower position.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if sum <= 0.0 {
        return equal_quotas(total, weights.len());
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Deals `k` distinct labels to every learner from a stream of shuffled label
/// permutations. Every label is dealt at least once when `learners * k >= labels`.
fn deal_labels<R: Rng>(labels: &[usize], learners: usize, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut deck: VecDeque<usize> = VecDeque::new();
    let mut hands = Vec::with_capacity(learners);
    for _ in 0..learners {
        let mut hand: Vec<usize> = Vec::with_capacity(k);
        let mut skipped = Vec::new();
        while hand.len() < k {
            if deck.is_empty() {
                let mut perm = labels.to_vec();
                perm.shuffle(rng);
                deck.extend(perm);
            }
            let l = deck.pop_front().expect("deck refilled");
            if hand.contains(&l) {
                skipped.push(l);
            } else {
                hand.push(l);
            }
        }
        for l in skipped.into_iter().rev() {
            deck.push_front(l);
        }
        hands.push(hand);
    }
    hands
}

fn label_limited<R: Rng>(
    dataset: &Dataset,
    indices: &[usize],
    learners: usize,
    label_fraction: f64,
    distribution: LabelDistribution,
    rng: &mut R,
) -> Result<Vec<Shard>> {
    let classes = dataset.classes();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in indices {
        pools[dataset.label(i)].push(i);
    }
    let present: Vec<usize> = (0..classes).filter(|&c| !pools[c].is_empty()).collect();
    let k = ((label_fraction * classes as f64).round() as usize).clamp(1, present.len());
    if learners * k < present.len() {
        return Err(Error::config(format!(
            "{learners} learners with {k} labels each cannot cover {} labels",
            present.len()
        )));
    }
    let hands = deal_labels(&present, learners, k, rng);
    let quotas = equal_quotas(indices.len(), learners);

    // demand[j][c]: how many samples learner j would like from label c
    let mut demand = vec![vec![0usize; classes]; learners];
    for (j, hand) in hands.iter().enumerate() {
        let counts = match distribution {
            LabelDistribution::Balanced => equal_quotas(quotas[j], hand.len()),
            LabelDistribution::Uniform => {
                let mut c = vec![0usize; hand.len()];
                for _ in 0..quotas[j] {
                    c[rng.random_range(0..hand.len())] += 1;
                }
                c
            }
            LabelDistribution::Zipf { alpha } => {
                let w: Vec<f64> = (1..=hand.len()).map(|r| (r as f64).powf(-alpha)).collect();
                apportion(quotas[j], &w)
            }
        };
        for (&label, count) in hand.iter().zip(counts) {
            demand[j][label] = count;
        }
    }

    // Hand out each label's supply to its holders in proportion to demand.
    let mut shards: Vec<Shard> = (0..learners)
        .map(|owner| Shard {
            owner,
            sample_indices: Vec::new(),
        })
        .collect();
    for &c in &present {
        let holders: Vec<usize> = (0..learners).filter(|&j| hands[j].contains(&c)).collect();
        let weights: Vec<f64> = holders.iter().map(|&j| demand[j][c] as f64).collect();
        let mut pool = std::mem::take(&mut pools[c]);
        pool.shuffle(rng);
        let alloc = apportion(pool.len(), &weights);
        let mut rest = pool.as_slice();
        for (&j, n) in holders.iter().zip(alloc) {
            let (head, tail) = rest.split_at(n);
            shards[j].sample_indices.extend_from_slice(head);
            rest = tail;
        }
    }
    Ok(shards)
}
