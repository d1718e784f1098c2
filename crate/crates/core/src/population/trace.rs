use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// One day, in seconds.
pub const DEFAULT_PERIOD: f64 = 86_400.0;
/// Sessions shorter than this are "short" (ten minutes).
pub const SHORT_SESSION_SECS: f64 = 600.0;

/// Availability windows `[start, end)` repeating every `period` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityTrace {
    period: f64,
    intervals: Vec<(f64, f64)>,
}

impl AvailabilityTrace {
    pub fn new(period: f64, mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::config(format!("trace period must be > 0, got {period}")));
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(s, e) in &intervals {
            if !(s >= 0.0 && s < e && e <= period) {
                return Err(Error::config(format!(
                    "interval [{s}, {e}) is not inside [0, {period})"
                )));
            }
        }
        if let Some(w) = intervals.windows(2).find(|w| w[1].0 < w[0].1) {
            return Err(Error::config(format!(
                "intervals [{}, {}) and [{}, {}) overlap",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
        Ok(Self { period, intervals })
    }

    pub fn always(period: f64) -> Self {
        Self {
            period,
            intervals: vec![(0.0, period)],
        }
    }

    pub fn never(period: f64) -> Self {
        Self {
            period,
            intervals: Vec::new(),
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    fn phase(&self, t: f64) -> f64 {
        t.rem_euclid(self.period)
    }

    pub fn is_available(&self, t: f64) -> bool {
        let r = self.phase(t);
        self.intervals.iter().any(|&(s, e)| s <= r && r < e)
    }

    fn total_per_period(&self) -> f64 {
        self.intervals.iter().map(|(s, e)| e - s).sum()
    }

    /// Available time in `[0, r)` for `r` within one period.
    fn partial(&self, r: f64) -> f64 {
        self.intervals
            .iter()
            .map(|&(s, e)| (e.min(r) - s).max(0.0))
            .sum()
    }

    /// Available time in `[0, t)`.
    fn cumulative(&self, t: f64) -> f64 {
        let cycles = (t / self.period).floor();
        cycles * self.total_per_period() + self.partial(t - cycles * self.period)
    }

    /// Exact fraction of `[start, end)` during which the learner is available.
    pub fn availability_probability(&self, start: f64, end: f64) -> f64 {
        if !(end > start) {
            return if self.is_available(start) { 1.0 } else { 0.0 };
        }
        let measure = self.cumulative(end) - self.cumulative(start);
        (measure / (end - start)).clamp(0.0, 1.0)
    }

    /// End of the availability run containing `t`, following windows that
    /// wrap across the period boundary. `None` if unavailable at `t`,
    /// infinity if the trace covers the whole period.
    pub fn available_until(&self, t: f64) -> Option<f64> {
        let r = self.phase(t);
        let idx = self.intervals.iter().position(|&(s, e)| s <= r && r < e)?;
        if self.total_per_period() >= self.period {
            return Some(f64::INFINITY);
        }
        let mut base = t - r;
        let mut i = idx;
        loop {
            let end = self.intervals[i].1;
            let next = if i + 1 < self.intervals.len() {
                Some((i + 1, base))
            } else if end >= self.period {
                Some((0, base + self.period))
            } else {
                None
            };
            match next {
                Some((j, b)) if self.intervals[j].0 + b <= end + base => {
                    i = j;
                    base = b;
                }
                _ => return Some(base + end),
            }
        }
    }
}

/// Shape parameters for [`generate_traces`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceParams {
    pub sessions_min: usize,
    pub sessions_max: usize,
    pub short_min: f64,
    pub long_max: f64,
    /// Leading fraction of the period treated as night.
    pub night_fraction: f64,
    /// Probability that a session starts during the night band.
    pub night_weight: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            sessions_min: 1,
            sessions_max: 4,
            short_min: 60.0,
            long_max: 4.0 * 3600.0,
            night_fraction: 1.0 / 3.0,
            night_weight: 0.6,
        }
    }
}

pub fn generate_diurnal_traces(
    n: usize,
    period: f64,
    short_session_fraction: f64,
    seed: u64,
) -> Vec<AvailabilityTrace> {
    generate_traces(n, period, short_session_fraction, &TraceParams::default(), seed)
}

/// Night-weighted session traces. Each session is short (uniform in
/// `[short_min, 600)` s) with probability `short_session_fraction`, otherwise
/// log-uniform in `[600, long_max]`. Sessions that cannot be placed without
/// overlapping after 100 attempts are dropped.
pub fn generate_traces(
    n: usize,
    period: f64,
    short_session_fraction: f64,
    params: &TraceParams,
    seed: u64,
) -> Vec<AvailabilityTrace> {
    let short_p = short_session_fraction.clamp(0.0, 1.0);
    let mut rng = rng_from(seed);
    let long_max = params.long_max.min(period / 2.0).max(SHORT_SESSION_SECS);
    (0..n)
        .map(|_| {
            let sessions = rng.random_range(params.sessions_min..=params.sessions_max.max(params.sessions_min));
            let mut placed: Vec<(f64, f64)> = Vec::with_capacity(sessions);
            for _ in 0..sessions {
                let len = if rng.random_bool(short_p) {
                    rng.random_range(params.short_min.min(SHORT_SESSION_SECS)..SHORT_SESSION_SECS)
                } else {
                    let (lo, hi) = (SHORT_SESSION_SECS.ln(), long_max.ln());
                    if hi > lo {
                        rng.random_range(lo..=hi).exp()
                    } else {
                        SHORT_SESSION_SECS
                    }
                };
                if len >= period {
                    continue;
                }
                let latest = period - len;
                for _ in 0..100 {
                    let hi = if rng.random_bool(params.night_weight) {
                        (params.night_fraction * period).min(latest)
                    } else {
                        latest
                    };
                    let start = if hi > 0.0 { rng.random_range(0.0..hi) } else { 0.0 };
                    let end = start + len;
                    if placed.iter().all(|&(s, e)| end < s || start > e) {
                        placed.push((start, end));
                        break;
                    }
                }
            }
            AvailabilityTrace::new(period, placed).expect("generated sessions are disjoint")
        })
        .collect()
}

/// Writes `learner_id,start,end,period` rows.
pub fn write_traces_csv(traces: &[AvailabilityTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(["learner_id", "start", "end", "period"])
        .map_err(|e| Error::parse(path, e))?;
    for (id, t) in traces.iter().enumerate() {
        for &(s, e) in t.intervals() {
            w.write_record([id.to_string(), s.to_string(), e.to_string(), t.period.to_string()])
                .map_err(|e| Error::parse(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct TraceRow {
    learner_id: usize,
    start: f64,
    end: f64,
    period: f64,
}

/// Loads traces for learners `0..n_learners`. Learners without rows are never
/// available.
pub fn read_traces_csv(path: impl AsRef<Path>, n_learners: usize) -> Result<Vec<AvailabilityTrace>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let mut rows: BTreeMap<usize, (f64, Vec<(f64, f64)>)> = BTreeMap::new();
    let mut default_period = None;
    for rec in r.deserialize::<TraceRow>() {
        let row = rec.map_err(|e| Error::parse(path, e))?;
        if row.learner_id >= n_learners {
            return Err(Error::parse(path, format!("learner_id {} >= {n_learners}", row.learner_id)));
        }
        default_period.get_or_insert(row.period);
        let entry = rows.entry(row.learner_id).or_insert((row.period, Vec::new()));
        if entry.0 != row.period {
            return Err(Error::parse(path, format!("learner {} has mixed periods", row.learner_id)));
        }
        entry.1.push((row.start, row.end));
    }
    let default_period = default_period.unwrap_or(DEFAULT_PERIOD);
    (0..n_learners)
        .map(|id| match rows.remove(&id) {
            Some((period, iv)) => AvailabilityTrace::new(period, iv).map_err(|e| Error::parse(path, e)),
            None => Ok(AvailabilityTrace::never(default_period)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_is_never_available() {
        let t = AvailabilityTrace::never(1000.0);
        assert!(!t.is_available(0.0));
        assert!(!t.is_available(999.0));
        assert!(!t.is_available(12345.0));
    }

    #[test]
    fn full_trace_is_always_available() {
        let t = AvailabilityTrace::always(1000.0);
        for x in [0.0, 1.0, 999.9, 1000.0, 54321.0] {
            assert!(t.is_available(x));
        }
        assert_eq!(t.available_until(10.0), Some(f64::INFINITY));
    }

    #[test]
    fn modular_lookup() {
        let t = AvailabilityTrace::new(1000.0, vec![(100.0, 200.0)]).unwrap();
        assert!(t.is_available(1150.0));
        assert!(!t.is_available(1200.0));
        assert!(t.is_available(100.0));
    }

    #[test]
    fn probability_cases() {
        let t = AvailabilityTrace::new(100.0, vec![(0.0, 50.0)]).unwrap();
        assert_eq!(t.availability_probability(25.0, 75.0), 0.5);
        assert_eq!(t.availability_probability(10.0, 40.0), 1.0);
        assert_eq!(t.availability_probability(60.0, 90.0), 0.0);
        // spans several periods
        assert!((t.availability_probability(25.0, 325.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn available_until_follows_wrap() {
        let t = AvailabilityTrace::new(100.0, vec![(0.0, 10.0), (20.0, 30.0), (90.0, 100.0)]).unwrap();
        assert_eq!(t.available_until(95.0), Some(110.0));
        assert_eq!(t.available_until(221.0), Some(230.0));
        assert_eq!(t.available_until(15.0), None);
        let touching = AvailabilityTrace::new(100.0, vec![(0.0, 10.0), (10.0, 40.0)]).unwrap();
        assert_eq!(touching.available_until(5.0), Some(40.0));
    }

    #[test]
    fn overlapping_intervals_rejected() {
        assert!(AvailabilityTrace::new(100.0, vec![(0.0, 50.0), (40.0, 60.0)]).is_err());
        assert!(AvailabilityTrace::new(100.0, vec![(90.0, 110.0)]).is_err());
    }

    fn short_share(traces: &[AvailabilityTrace]) -> f64 {
        let lens: Vec<f64> = traces
            .iter()
            .flat_map(|t| t.intervals().iter().map(|(s, e)| e - s))
            .collect();
        lens.iter().filter(|&&l| l < SHORT_SESSION_SECS).count() as f64 / lens.len() as f64
    }

    #[test]
    fn short_session_share_matches_target() {
        let traces = generate_diurnal_traces(10_000, DEFAULT_PERIOD, 0.7, 1);
        let share = short_share(&traces);
        assert!((share - 0.7).abs() <= 0.03, "share {share}");
    }

    #[test]
    fn zero_short_fraction_has_no_short_sessions() {
        let traces = generate_diurnal_traces(500, DEFAULT_PERIOD, 0.0, 2);
        assert_eq!(short_share(&traces), 0.0);
    }

    #[test]
    fn traces_are_deterministic() {
        assert_eq!(
            generate_diurnal_traces(100, DEFAULT_PERIOD, 0.7, 9),
            generate_diurnal_traces(100, DEFAULT_PERIOD, 0.7, 9)
        );
    }

    #[test]
    fn csv_round_trip() {
        let traces = generate_diurnal_traces(20, DEFAULT_PERIOD, 0.7, 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traces.csv");
        write_traces_csv(&traces, &p).unwrap();
        assert_eq!(read_traces_csv(&p, 20).unwrap(), traces);
        let padded = read_traces_csv(&p, 22).unwrap();
        assert!(padded[21].intervals().is_empty());
    }
}
