use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;

/// Share of the population in each of the six device clusters, fastest first.
pub const CLUSTER_WEIGHTS: [f64; 6] = [0.25, 0.25, 0.2, 0.15, 0.1, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Seconds of compute per training sample.
    pub per_sample_compute_time: f64,
    /// Bytes per second.
    pub uplink_bandwidth: f64,
    /// Bytes per second.
    pub downlink_bandwidth: f64,
    pub cluster_id: u8,
}

/// Generator parameters for [`sample_profiles`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileParams {
    /// Median per-sample compute time of cluster 0.
    pub base_compute: f64,
    /// Ratio between consecutive cluster centers.
    pub cluster_ratio: f64,
    /// Log-normal sigma of compute time around the cluster center.
    pub compute_sigma: f64,
    pub uplink_median: f64,
    pub downlink_median: f64,
    pub bandwidth_sigma: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            base_compute: 0.02,
            cluster_ratio: 2.0,
            compute_sigma: 0.25,
            uplink_median: 1.0e6,
            downlink_median: 4.0e6,
            bandwidth_sigma: 0.5,
        }
    }
}

pub fn sample_profiles(n: usize, seed: u64) -> Vec<DeviceProfile> {
    sample_profiles_with(n, &ProfileParams::default(), seed)
}

/// Draws a cluster per device from [`CLUSTER_WEIGHTS`], then a log-normal
/// compute time around `base_compute * cluster_ratio^cluster`.
pub fn sample_profiles_with(n: usize, params: &ProfileParams, seed: u64) -> Vec<DeviceProfile> {
    let mut rng = rng_from(seed);
    let clusters = WeightedIndex::new(CLUSTER_WEIGHTS).expect("static weights");
    let jitter = LogNormal::new(0.0, params.compute_sigma).expect("sigma >= 0");
    let up = LogNormal::new(params.uplink_median.ln(), params.bandwidth_sigma).expect("sigma >= 0");
    let down =
        LogNormal::new(params.downlink_median.ln(), params.bandwidth_sigma).expect("sigma >= 0");
    (0..n)
        .map(|_| {
            let cluster = clusters.sample(&mut rng);
            let center = params.base_compute * params.cluster_ratio.powi(cluster as i32);
            DeviceProfile {
                per_sample_compute_time: center * jitter.sample(&mut rng),
                uplink_bandwidth: up.sample(&mut rng),
                downlink_bandwidth: down.sample(&mut rng),
                cluster_id: cluster as u8,
            }
        })
        .collect()
}

/// Compute time plus model download and upload time.
pub fn completion_time(profile: &DeviceProfile, samples_processed: usize, model_bytes: u64) -> f64 {
    let bytes = model_bytes as f64;
    samples_processed as f64 * profile.per_sample_compute_time
        + bytes / profile.downlink_bandwidth
        + bytes / profile.uplink_bandwidth
}

/// Hardware-advance transform: the `fraction` of devices with the shortest
/// completion time get twice the compute speed and twice the bandwidth, which
/// halves their completion time. Ties are broken by position.
pub fn accelerate_fastest(
    profiles: &[DeviceProfile],
    fraction: f64,
    samples_processed: usize,
    model_bytes: u64,
) -> Vec<DeviceProfile> {
    let count = ((fraction.clamp(0.0, 1.0) * profiles.len() as f64).ceil() as usize).min(profiles.len());
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| {
        completion_time(&profiles[a], samples_processed, model_bytes)
            .total_cmp(&completion_time(&profiles[b], samples_processed, model_bytes))
            .then(a.cmp(&b))
    });
    let mut out = profiles.to_vec();
    for &i in &order[..count] {
        let p = &mut out[i];
        p.per_sample_compute_time *= 0.5;
        p.uplink_bandwidth *= 2.0;
        p.downlink_bandwidth *= 2.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    #[test]
    fn population_has_long_tail() {
        let p = sample_profiles(1000, 5);
        let times: Vec<f64> = p.iter().map(|d| d.per_sample_compute_time).collect();
        let max = times.iter().copied().fold(0.0, f64::max);
        let med = median(times);
        assert!(max / med >= 5.0, "max/median = {}", max / med);
        assert!(p.iter().all(|d| d.cluster_id < 6));
    }

    #[test]
    fn single_profile_is_positive() {
        let p = sample_profiles(1, 42);
        assert_eq!(p.len(), 1);
        let d = p[0];
        assert!(d.per_sample_compute_time > 0.0 && d.uplink_bandwidth > 0.0 && d.downlink_bandwidth > 0.0);
    }

    #[test]
    fn profiles_are_deterministic() {
        assert_eq!(sample_profiles(50, 3), sample_profiles(50, 3));
    }

    #[test]
    fn completion_time_formula() {
        let d = DeviceProfile {
            per_sample_compute_time: 0.01,
            uplink_bandwidth: 1e6,
            downlink_bandwidth: 1e6,
            cluster_id: 0,
        };
        assert_eq!(completion_time(&d, 100, 1_000_000), 3.0);
        let fast = DeviceProfile {
            per_sample_compute_time: 0.005,
            uplink_bandwidth: 2e6,
            downlink_bandwidth: 2e6,
            cluster_id: 0,
        };
        assert_eq!(completion_time(&fast, 100, 1_000_000), 1.5);
    }

    #[test]
    fn hardware_advance_halves_top_quarter() {
        let p = sample_profiles(40, 8);
        let fast = accelerate_fastest(&p, 0.25, 100, 1_000_000);
        let before: Vec<f64> = p.iter().map(|d| completion_time(d, 100, 1_000_000)).collect();
        let mut sorted = before.clone();
        sorted.sort_by(f64::total_cmp);
        let cutoff = sorted[9];
        let mut changed = 0;
        for (i, d) in fast.iter().enumerate() {
            let after = completion_time(d, 100, 1_000_000);
            if before[i] <= cutoff {
                assert!((after - 0.5 * before[i]).abs() < 1e-12);
                changed += 1;
            } else {
                assert_eq!(after, before[i]);
            }
        }
        assert_eq!(changed, 10);
    }
}
