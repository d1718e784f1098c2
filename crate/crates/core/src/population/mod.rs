//! Learner population: device speed profiles, availability traces and the
//! availability predictor consulted at check-in.

mod profile;
mod trace;

pub use profile::{
    accelerate_fastest, completion_time, sample_profiles, sample_profiles_with, DeviceProfile,
    ProfileParams,
    CLUSTER_WEIGHTS,
};
pub use trace::{
    generate_diurnal_traces, generate_traces, read_traces_csv, write_traces_csv,
    AvailabilityTrace, TraceParams, DEFAULT_PERIOD, SHORT_SESSION_SECS,
};

use crate::model_data::Shard;

#[derive(Debug, Clone)]
pub struct Learner {
    pub id: usize,
    pub profile: DeviceProfile,
    pub trace: AvailabilityTrace,
    pub shard: Shard,
    /// First round index at which the learner may check in again.
    pub cooldown_until: u64,
}

impl Learner {
    pub fn new(id: usize, profile: DeviceProfile, trace: AvailabilityTrace, shard: Shard) -> Self {
        Self {
            id,
            profile,
            trace,
            shard,
            cooldown_until: 0,
        }
    }
}
