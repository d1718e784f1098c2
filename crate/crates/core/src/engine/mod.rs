//! Discrete-event round loop tying selection, local training and aggregation
//! together on a simulated clock.

mod config;
mod round;
mod sim;

pub use config::{
    AvailabilityScenario, ExperimentConfig, LabelDistributionKind, Mode, PartitionKind, RuleKind,
    Threshold,
};
pub use round::{
    collect_dl, collect_oc, overcommitted, track_stragglers, Clock, Completion, Matured,
    RoundCollection, WorkItem,
};
pub use sim::{build_population, run_experiment, run_experiment_traced, Population, RunOutput, WorkSummary};
