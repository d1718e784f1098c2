//! Synthetic classification data, learner partitioning and the softmax
//! regression model trained by every participant.

mod dataset;
mod params;
mod partition;
mod softmax;

pub use dataset::{generate_dataset, Dataset, Split, DEFAULT_SPREAD};
pub use params::ParameterVector;
pub use partition::{partition, LabelDistribution, PartitionSpec, Shard};
pub use softmax::{
    evaluate, local_steps_for_epochs, local_update, loss_and_gradient, mean_loss, LocalUpdate,
};
