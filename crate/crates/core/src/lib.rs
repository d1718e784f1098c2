//! Deterministic discrete-event simulator for federated learning.
//!
//! The crate models a population of heterogeneous learners (compute speed,
//! bandwidth, diurnal availability, private data shard), a central server that
//! runs training rounds, and the strategies that decide who participates and
//! how returned updates are combined:
//!
//! * [`selection`]: random, least-available-first priority, Oort-style utility
//!   and SAFA-style select-all, plus the adaptive participant target.
//! * [`aggregation`]: FedAvg, stale synchronous FedAvg and the staleness
//!   weight-scaling rules (equal, DynSGD, AdaSGD, hybrid).
//! * [`engine`]: the round loop with over-commit (OC) and deadline (DL) modes.
//! * [`metrics`]: resource usage, wastage, time-to-accuracy and exports.
//!
//! The learning task is multinomial logistic regression over synthetic Gaussian
//! blobs ([`model_data`]), which keeps every quantity the algorithms consume
//! (loss, gradient, delta, accuracy) exact and cheap.

pub mod aggregation;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model_data;
pub mod population;
pub mod rng;
pub mod scenarios;
pub mod selection;

pub use aggregation::{ScalingRule, StalenessPolicy, UpdateRecord};
pub use engine::{run_experiment, ExperimentConfig, RunOutput};
pub use error::{Error, Result};
pub use metrics::{MetricsLog, RoundOutcome, RoundRow};
pub use model_data::{Dataset, ParameterVector, PartitionSpec, Shard};
pub use population::{AvailabilityTrace, DeviceProfile, Learner};
pub use selection::{CheckIn, SelectionDecision, SelectorKind};
