//! Multinomial logistic regression: mean cross-entropy, its exact gradient,
//! the participant's local SGD loop and argmax accuracy.

use rand::seq::SliceRandom;

use super::{Dataset, ParameterVector, Shard};
use crate::error::{Error, Result};
use crate::rng::rng_from;

fn check_params(params: &ParameterVector, dataset: &Dataset) -> Result<()> {
    if params.len() != dataset.param_len() {
        return Err(Error::config(format!(
            "parameter vector has length {}, model needs {}",
            params.len(),
            dataset.param_len()
        )));
    }
    if !params.is_finite() {
        return Err(Error::Numeric("non-finite model parameters".into()));
    }
    Ok(())
}

fn check_indices(dataset: &Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::config("empty sample index list"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::config(format!("sample index {bad} out of range")));
    }
    Ok(())
}

fn logits_into(params: &[f64], dataset: &Dataset, i: usize, out: &mut [f64]) {
    let dim = dataset.dim();
    let classes = dataset.classes();
    let x = dataset.row(i);
    let (weights, biases) = params.split_at(classes * dim);
    for (c, o) in out.iter_mut().enumerate() {
        let w = &weights[c * dim..(c + 1) * dim];
        *o = biases[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy over `indices` and its gradient with respect to `params`.
pub fn loss_and_gradient(
    params: &ParameterVector,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<(f64, ParameterVector)> {
    check_params(params, dataset)?;
    check_indices(dataset, indices)?;
    let dim = dataset.dim();
    let classes = dataset.classes();
    let mut grad = vec![0.0; params.len()];
    let mut logits = vec![0.0; classes];
    let mut loss = 0.0;
    for &i in indices {
        logits_into(params.values(), dataset, i, &mut logits);
        let lse = log_sum_exp(&logits);
        let y = dataset.label(i);
        loss += lse - logits[y];
        let x = dataset.row(i);
        let (gw, gb) = grad.split_at_mut(classes * dim);
        for c in 0..classes {
            let mut p = (logits[c] - lse).exp();
            if c == y {
                p -= 1.0;
            }
            for (g, xv) in gw[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *g += p * xv;
            }
            gb[c] += p;
        }
    }
    let n = indices.len() as f64;
    let loss = loss / n;
    for g in &mut grad {
        *g /= n;
    }
    let grad = ParameterVector::from_vec(grad);
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, grad))
}

/// Mean cross-entropy without the gradient.
pub fn mean_loss(params: &ParameterVector, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    check_params(params, dataset)?;
    check_indices(dataset, indices)?;
    let mut logits = vec![0.0; dataset.classes()];
    let total: f64 = indices
        .iter()
        .map(|&i| {
            logits_into(params.values(), dataset, i, &mut logits);
            log_sum_exp(&logits) - logits[dataset.label(i)]
        })
        .sum();
    Ok(total / indices.len() as f64)
}

/// Output of one participant's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    /// `y_K - y_0`
    pub delta: ParameterVector,
    /// Sum of the K minibatch gradients.
    pub grad_sum: ParameterVector,
    /// Mean minibatch loss over the K steps.
    pub mean_loss: f64,
    pub samples_processed: usize,
}

/// Runs `steps` minibatch SGD steps from `start` on the shard and returns the
/// model delta. Minibatches are drawn without replacement from a per-epoch
/// permutation seeded by `seed`; a trailing partial batch is dropped and the
/// shard reshuffled. When `batch_size >= shard.len()` every step is full-batch
/// over the shard in index order.
pub fn local_update(
    start: &ParameterVector,
    dataset: &Dataset,
    shard: &Shard,
    gamma: f64,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<LocalUpdate> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::config(format!("learning rate must be >= 0, got {gamma}")));
    }
    if steps == 0 || batch_size == 0 {
        return Err(Error::config("local_update needs steps >= 1 and batch_size >= 1"));
    }
    if shard.is_empty() {
        return Err(Error::config(format!("learner {} has an empty shard", shard.owner)));
    }
    check_params(start, dataset)?;

    let mut y = start.clone();
    let mut grad_sum = ParameterVector::zeros(start.len());
    let mut loss_sum = 0.0;
    let full_batch = batch_size >= shard.len();
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = shard.sample_indices.clone();
    let mut cursor = order.len();
    let mut samples = 0;
    for _ in 0..steps {
        let batch: &[usize] = if full_batch {
            &shard.sample_indices
        } else {
            if cursor + batch_size > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let b = &order[cursor..cursor + batch_size];
            cursor += batch_size;
            b
        };
        let (loss, g) = loss_and_gradient(&y, dataset, batch)?;
        samples += batch.len();
        loss_sum += loss;
        y.add_scaled(-gamma, &g);
        grad_sum.add_scaled(1.0, &g);
    }
    Ok(LocalUpdate {
        delta: y.sub(start),
        grad_sum,
        mean_loss: loss_sum / steps as f64,
        samples_processed: samples,
    })
}

/// Converts local epochs to SGD steps for the sampler used by [`local_update`]:
/// one epoch is `shard_size / batch_size` full batches (at least one).
pub fn local_steps_for_epochs(epochs: usize, shard_size: usize, batch_size: usize) -> usize {
    epochs * (shard_size / batch_size.max(1)).max(1)
}

/// Fraction of `indices` whose argmax prediction matches the label. Ties go
/// to the lowest class id.
pub fn evaluate(params: &ParameterVector, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    check_params(params, dataset)?;
    check_indices(dataset, indices)?;
    let mut logits = vec![0.0; dataset.classes()];
    let correct = indices
        .iter()
        .filter(|&&i| {
            logits_into(params.values(), dataset, i, &mut logits);
            let mut best = 0;
            for c in 1..logits.len() {
                if logits[c] > logits[best] {
                    best = c;
                }
            }
            best == dataset.label(i)
        })
        .count();
    Ok(correct as f64 / indices.len() as f64)
}
