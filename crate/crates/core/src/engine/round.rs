//! Round bookkeeping: the simulated clock, dispatched work, and the OC / DL
//! rules that decide which completions count for a round.

use crate::model_data::LocalUpdate;
use crate::population::{completion_time, DeviceProfile};

/// Simulated time in seconds. Never moves backwards.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Clock {
    now: f64,
}

impl Clock {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance_to(&mut self, t: f64) {
        assert!(t >= self.now, "clock moved backwards: {} -> {t}", self.now);
        self.now = t;
    }
}

/// `ceil(factor * n)`, tolerant of representation error (1.3 * 10 -> 13).
pub fn overcommitted(n: usize, factor: f64) -> usize {
    let x = factor * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Work handed to one participant in one round.
#[derive(Debug, Clone)]
pub struct WorkItem {
    pub learner: usize,
    pub origin_round: u64,
    pub dispatch_time: f64,
    /// Absolute time the upload would complete.
    pub finish_time: f64,
    /// Absolute time the device went unavailable before finishing.
    pub dropout_time: Option<f64>,
    /// `None` when the learner drops out (the result is never produced).
    pub update: Option<LocalUpdate>,
    pub download_s: f64,
    pub compute_s: f64,
    pub upload_s: f64,
    /// Set once the server has decided not to use this result.
    pub discard: bool,
}

impl WorkItem {
    pub fn new(
        learner: usize,
        origin_round: u64,
        dispatch_time: f64,
        profile: &DeviceProfile,
        samples_processed: usize,
        model_bytes: u64,
        available_until: Option<f64>,
        update: Option<LocalUpdate>,
    ) -> Self {
        let download_s = model_bytes as f64 / profile.downlink_bandwidth;
        let compute_s = samples_processed as f64 * profile.per_sample_compute_time;
        let upload_s = model_bytes as f64 / profile.uplink_bandwidth;
        let total = completion_time(profile, samples_processed, model_bytes);
        let finish_time = dispatch_time + total;
        let dropout_time = available_until.filter(|&u| u < finish_time);
        Self {
            learner,
            origin_round,
            dispatch_time,
            finish_time,
            dropout_time,
            update: if dropout_time.is_some() { None } else { update },
            download_s,
            compute_s,
            upload_s,
            discard: false,
        }
    }

    /// Stops the work at `at` (if still running then): the result is lost and
    /// only the time up to `at` is spent.
    pub fn abandon(&mut self, at: f64) {
        if at < self.resolve_time() {
            self.dropout_time = Some(at.max(self.dispatch_time));
            self.update = None;
        }
    }

    pub fn dropped(&self) -> bool {
        self.dropout_time.is_some()
    }

    /// When the item stops occupying the learner.
    pub fn resolve_time(&self) -> f64 {
        self.dropout_time.unwrap_or(self.finish_time)
    }

    /// `(compute, communication)` seconds actually spent: download, compute and
    /// upload run in sequence and a dropout cuts the sequence short.
    pub fn spent(&self) -> (f64, f64) {
        let Some(drop) = self.dropout_time else {
            return (self.compute_s, self.download_s + self.upload_s);
        };
        let mut left = (drop - self.dispatch_time).max(0.0);
        let down = left.min(self.download_s);
        left -= down;
        let compute = left.min(self.compute_s);
        left -= compute;
        let up = left.min(self.upload_s);
        (compute, down + up)
    }
}

/// Completion of one dispatched item as seen by the round rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub learner: usize,
    /// Absolute upload time, or dropout time when `dropped`.
    pub time: f64,
    pub dropped: bool,
}

impl From<&WorkItem> for Completion {
    fn from(w: &WorkItem) -> Self {
        Completion {
            learner: w.learner,
            time: w.resolve_time(),
            dropped: w.dropped(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundCollection {
    pub end_time: f64,
    /// Positions (into the completion list) of updates that count for this round.
    pub arrived: Vec<usize>,
    /// Positions of non-dropped items that finish after the round closes.
    pub stragglers: Vec<usize>,
    pub success: bool,
}

impl RoundCollection {
    pub fn duration(&self, dispatch_time: f64) -> f64 {
        self.end_time - dispatch_time
    }
}

fn completion_order(items: &[Completion]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).filter(|&i| !items[i].dropped).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .time
            .total_cmp(&items[b].time)
            .then(items[a].learner.cmp(&items[b].learner))
    });
    order
}

/// Over-commit rule: the round closes at the `n_t`-th completion (ties broken
/// by learner id). With fewer than `n_t` completions (dropouts), or if the
/// `n_t`-th completion misses an optional deadline, the round fails.
pub fn collect_oc(
    dispatch_time: f64,
    items: &[Completion],
    n_t: usize,
    deadline: Option<f64>,
) -> RoundCollection {
    let order = completion_order(items);
    let cap = deadline.map(|d| dispatch_time + d);
    let n_t = n_t.max(1);
    if order.len() >= n_t {
        let end = items[order[n_t - 1]].time;
        if cap.is_none_or(|c| end <= c) {
            return RoundCollection {
                end_time: end,
                arrived: order[..n_t].to_vec(),
                stragglers: order[n_t..].to_vec(),
                success: true,
            };
        }
    }
    let last = items.iter().map(|c| c.time).fold(dispatch_time, f64::max);
    let end_time = cap.map_or(last, |c| c.min(last.max(dispatch_time)));
    let (arrived, stragglers): (Vec<usize>, Vec<usize>) =
        order.into_iter().partition(|&i| items[i].time <= end_time);
    RoundCollection {
        end_time,
        arrived,
        stragglers,
        success: false,
    }
}

/// Deadline rule: everything finishing by `dispatch_time + deadline`
/// (inclusive) arrives; the round succeeds with at least `min_success` arrivals.
pub fn collect_dl(
    dispatch_time: f64,
    items: &[Completion],
    deadline: f64,
    min_success: usize,
) -> RoundCollection {
    let end_time = dispatch_time + deadline;
    let (arrived, stragglers): (Vec<usize>, Vec<usize>) = completion_order(items)
        .into_iter()
        .partition(|&i| items[i].time <= end_time);
    let success = arrived.len() >= min_success;
    RoundCollection {
        end_time,
        arrived,
        stragglers,
        success,
    }
}

/// Items leaving the in-flight set at a round boundary.
#[derive(Debug, Default)]
pub struct Matured {
    /// Finished on time for staleness-aware aggregation.
    pub stale: Vec<WorkItem>,
    /// Dropped out, or finished after the server gave up on them.
    pub discarded: Vec<WorkItem>,
}

/// Removes every in-flight item resolved by `boundary`. Useful results from
/// `current_round` itself stay in flight so they surface with staleness >= 1.
pub fn track_stragglers(in_flight: &mut Vec<WorkItem>, boundary: f64, current_round: u64) -> Matured {
    let mut out = Matured::default();
    let mut keep = Vec::with_capacity(in_flight.len());
    for item in in_flight.drain(..) {
        let pending_useful = !item.discard && !item.dropped();
        if item.resolve_time() > boundary || (pending_useful && item.origin_round >= current_round) {
            keep.push(item);
        } else if pending_useful {
            out.stale.push(item);
        } else {
            out.discarded.push(item);
        }
    }
    *in_flight = keep;
    out.stale.sort_by_key(|w| (w.learner, w.origin_round));
    out.discarded.sort_by_key(|w| (w.learner, w.origin_round));
    out
}
