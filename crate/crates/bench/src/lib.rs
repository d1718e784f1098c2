//! Fixtures shared by the criterion benches.

use fedsim_core::aggregation::UpdateRecord;
use fedsim_core::model_data::{generate_dataset, DEFAULT_SPREAD};
use fedsim_core::{Dataset, ParameterVector, Shard};

pub fn dataset() -> Dataset {
    generate_dataset(10, 32, 500, DEFAULT_SPREAD, 7).expect("valid dataset")
}

/// A shard of the first `n` samples, spread across classes.
pub fn shard(dataset: &Dataset, n: usize) -> Shard {
    let step = (dataset.len() / n).max(1);
    Shard {
        owner: 0,
        sample_indices: (0..dataset.len()).step_by(step).take(n).collect(),
    }
}

/// `n` updates of length `len`, with staleness cycling through 0..=4.
pub fn updates(n: usize, len: usize) -> Vec<UpdateRecord> {
    (0..n)
        .map(|i| {
            let delta = ParameterVector::from_vec((0..len).map(|j| ((i * 31 + j) % 17) as f64 * 0.01 - 0.08).collect());
            let tau = (i % 5) as u64;
            UpdateRecord::new(i, delta, 10 - tau, 10, 50)
        })
        .collect()
}
