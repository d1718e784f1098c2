use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{AvailabilityScenario, ExperimentConfig, Mode};
use super::round::{collect_dl, collect_oc, overcommitted, track_stragglers, Clock, Completion, WorkItem};
use crate::aggregation::{aggregate_fresh, aggregate_mixed_with, server_update, UpdateRecord};
use crate::error::{Error, Result};
use crate::metrics::{Disposition, MetricsLog, RoundOutcome};
use crate::model_data::{evaluate, local_update, mean_loss, partition, Dataset, ParameterVector, Split};
use crate::population::{
    accelerate_fastest, completion_time, generate_traces, read_traces_csv, sample_profiles_with,
    AvailabilityTrace, Learner,
};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::selection::{
    adaptive_participant_target, select_all, select_priority, select_random, select_utility,
    start_cooldown, update_round_duration, CheckIn, SelectorKind,
};

/// Train/test split plus the learners built over the training part.
#[derive(Debug, Clone)]
pub struct Population {
    pub split: Split,
    pub learners: Vec<Learner>,
}

/// Counts of dispatched work by final fate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WorkSummary {
    pub dispatched: usize,
    pub fresh: usize,
    pub stale_used: usize,
    pub discarded: usize,
    /// Still in flight or buffered when the last round closed.
    pub unresolved: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: MetricsLog,
    pub final_params: ParameterVector,
    /// Global model after round 0, 1, ..., T (only for traced runs).
    pub trajectory: Vec<ParameterVector>,
    pub work: WorkSummary,
}

fn samples_per_round(config: &ExperimentConfig, shard_len: usize) -> usize {
    config.local_steps * config.batch_size.min(shard_len)
}

pub fn build_population(config: &ExperimentConfig, dataset: &Dataset) -> Result<Population> {
    config.validate()?;
    let split = dataset.train_test_split(derive_seed(config.seed, &[stream::SPLIT]));
    if split.train.iter().any(|i| split.test.binary_search(i).is_ok()) {
        return Err(Error::Diagnostic("train and test splits overlap".into()));
    }
    let n = config.n_learners;
    let shards = partition(
        dataset,
        &split.train,
        n,
        &config.partition_spec()?,
        derive_seed(config.seed, &[stream::PARTITION]),
    )?;
    let mut profiles = sample_profiles_with(
        n,
        &config.profile_params(),
        derive_seed(config.seed, &[stream::PROFILES]),
    );
    if config.hardware_advance > 0.0 {
        let typical = samples_per_round(config, split.train.len() / n);
        profiles = accelerate_fastest(&profiles, config.hardware_advance, typical, config.model_bytes);
    }
    let traces = match (config.availability, &config.trace_file) {
        (AvailabilityScenario::AllAvail, _) => vec![AvailabilityTrace::always(config.trace_period); n],
        (AvailabilityScenario::DynAvail, Some(path)) => read_traces_csv(path, n)?,
        (AvailabilityScenario::DynAvail, None) => generate_traces(
            n,
            config.trace_period,
            config.short_session_fraction,
            &config.trace_params(),
            derive_seed(config.seed, &[stream::TRACES]),
        ),
    };
    let learners = shards
        .into_iter()
        .zip(profiles)
        .zip(traces)
        .enumerate()
        .map(|(id, ((shard, profile), trace))| Learner::new(id, profile, trace, shard))
        .collect();
    Ok(Population { split, learners })
}

pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<RunOutput> {
    Simulation::new(config, dataset, false)?.run()
}

/// Like [`run_experiment`] but also records the global model after every round.
pub fn run_experiment_traced(config: &ExperimentConfig, dataset: &Dataset) -> Result<RunOutput> {
    Simulation::new(config, dataset, true)?.run()
}

struct Simulation<'a> {
    config: &'a ExperimentConfig,
    dataset: &'a Dataset,
    split: Split,
    learners: Vec<Learner>,
    last_loss: Vec<Option<f64>>,
    busy: Vec<bool>,
    x: ParameterVector,
    clock: Clock,
    mu: f64,
    in_flight: Vec<WorkItem>,
    stale_buffer: Vec<WorkItem>,
    log: MetricsLog,
    work: WorkSummary,
    trace: Option<Vec<ParameterVector>>,
    accuracy: f64,
    loss: f64,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a ExperimentConfig, dataset: &'a Dataset, traced: bool) -> Result<Self> {
        let Population { split, learners } = build_population(config, dataset)?;
        let n = learners.len();
        let mu = match config.mode {
            Mode::Dl => config.deadline.expect("validated"),
            Mode::Oc => {
                let mut times: Vec<f64> = learners
                    .iter()
                    .filter(|l| !l.shard.is_empty())
                    .map(|l| expected_completion(config, l))
                    .collect();
                times.sort_by(f64::total_cmp);
                times.get(times.len() / 2).copied().unwrap_or(config.selection_window)
            }
        };
        Ok(Self {
            config,
            dataset,
            split,
            learners,
            last_loss: vec![None; n],
            busy: vec![false; n],
            x: ParameterVector::zeros(dataset.param_len()),
            clock: Clock::default(),
            mu,
            in_flight: Vec::new(),
            stale_buffer: Vec::new(),
            log: MetricsLog::new(),
            work: WorkSummary::default(),
            trace: traced.then(Vec::new),
            accuracy: 0.0,
            loss: 0.0,
        })
    }

    fn run(mut self) -> Result<RunOutput> {
        self.evaluate()?;
        self.log.close_round(0, 0.0, self.accuracy, self.loss, RoundOutcome::Initial);
        self.snapshot();
        for t in 1..=self.config.rounds as u64 {
            let outcome = self.round(t)?;
            if t % self.config.eval_every as u64 == 0 || t == self.config.rounds as u64 {
                self.evaluate()?;
            }
            self.log.close_round(t, self.clock.now(), self.accuracy, self.loss, outcome);
            self.snapshot();
        }
        self.work.unresolved = self.in_flight.len() + self.stale_buffer.len();
        Ok(RunOutput {
            log: self.log,
            final_params: self.x,
            trajectory: self.trace.unwrap_or_default(),
            work: self.work,
        })
    }

    fn snapshot(&mut self) {
        if let Some(tr) = &mut self.trace {
            tr.push(self.x.clone());
        }
    }

    fn evaluate(&mut self) -> Result<()> {
        self.accuracy = evaluate(&self.x, self.dataset, &self.split.test)?;
        self.loss = mean_loss(&self.x, self.dataset, &self.split.train)?;
        if !self.loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged: {}", self.loss)));
        }
        Ok(())
    }

    fn check_ins(&self, t: u64, now: f64) -> Vec<CheckIn> {
        let noise = self.config.predictor_noise;
        let mut rng = derived_rng(self.config.seed, &[stream::PREDICTOR_NOISE, t]);
        self.learners
            .iter()
            .filter(|l| {
                !l.shard.is_empty()
                    && !self.busy[l.id]
                    && l.cooldown_until <= t
                    && l.trace.is_available(now)
            })
            .map(|l| {
                let mut p = l.trace.availability_probability(now + self.mu, now + 2.0 * self.mu);
                if noise > 0.0 {
                    p = (p + rng.random_range(-noise..=noise)).clamp(0.0, 1.0);
                }
                CheckIn {
                    learner_id: l.id,
                    availability_prob: p,
                    last_loss: self.last_loss[l.id],
                    expected_completion: expected_completion(self.config, l),
                }
            })
            .collect()
    }

    fn participant_target(&self, t: u64, now: f64) -> usize {
        let cfg = self.config;
        if !cfg.apt {
            return cfg.n0;
        }
        let eps = cfg.straggler_probe_noise;
        let mut rng = derived_rng(cfg.seed, &[stream::STRAGGLER_PROBE, t]);
        let remaining: Vec<f64> = self
            .in_flight
            .iter()
            .filter(|w| !w.discard)
            .map(|w| {
                let rt = (w.finish_time - now).max(0.0);
                if eps > 0.0 {
                    rt * (1.0 + rng.random_range(-eps..=eps))
                } else {
                    rt
                }
            })
            .collect();
        adaptive_participant_target(cfg.n0, &remaining, self.mu)
    }

    fn dispatch(&self, t: u64, now: f64, participants: &[usize]) -> Result<Vec<WorkItem>> {
        let cfg = self.config;
        participants
            .par_iter()
            .map(|&id| {
                let l = &self.learners[id];
                let samples = samples_per_round(cfg, l.shard.len());
                let until = match cfg.availability {
                    AvailabilityScenario::AllAvail => None,
                    AvailabilityScenario::DynAvail => l.trace.available_until(now),
                };
                let finish = now + completion_time(&l.profile, samples, cfg.model_bytes);
                let update = if until.is_some_and(|u| u < finish) {
                    None
                } else {
                    Some(local_update(
                        &self.x,
                        self.dataset,
                        &l.shard,
                        cfg.gamma,
                        cfg.local_steps,
                        cfg.batch_size,
                        derive_seed(cfg.seed, &[stream::LOCAL_TRAINING, t, id as u64]),
                    )?)
                };
                Ok(WorkItem::new(id, t, now, &l.profile, samples, cfg.model_bytes, until, update))
            })
            .collect()
    }

    fn round(&mut self, t: u64) -> Result<RoundOutcome> {
        let cfg = self.config;
        let start = self.clock.now();
        let pool = self.check_ins(t, start);
        if pool.is_empty() {
            let boundary = start + cfg.selection_window;
            self.clock.advance_to(boundary);
            self.release(t, boundary);
            return Ok(RoundOutcome::Skipped);
        }

        let n_t = self.participant_target(t, start);
        let select_seed = derive_seed(cfg.seed, &[stream::SELECTION, t]);
        let count = match cfg.mode {
            Mode::Oc => overcommitted(n_t, cfg.overcommit_factor),
            Mode::Dl => n_t,
        }
        .min(pool.len());
        let deadline_pref = cfg.deadline_pref.unwrap_or(self.mu);
        let decision = match cfg.selector {
            SelectorKind::Random => select_random(&pool, count, select_seed),
            SelectorKind::Priority => select_priority(&pool, count, select_seed),
            SelectorKind::Utility => {
                select_utility(&pool, count, cfg.exploration_fraction, deadline_pref, select_seed)
            }
            SelectorKind::All => select_all(&pool),
        };
        let selected = decision.participants.len();
        let base = if cfg.selector == SelectorKind::All { selected } else { n_t };
        let quorum = |ratio: f64| ((ratio * base as f64 - 1e-9).ceil() as usize).clamp(1, selected);

        let items = self.dispatch(t, start, &decision.participants)?;
        self.work.dispatched += items.len();
        for w in &items {
            self.busy[w.learner] = true;
        }
        let completions: Vec<Completion> = items.iter().map(Completion::from).collect();
        let (collection, min_success) = match cfg.mode {
            Mode::Oc => {
                let k = cfg.target_ratio.map_or(n_t.clamp(1, selected), quorum);
                (collect_oc(start, &completions, k, cfg.deadline), k)
            }
            Mode::Dl => {
                let m = quorum(cfg.target_ratio.unwrap_or(0.8));
                (collect_dl(start, &completions, cfg.deadline.expect("validated"), m), m)
            }
        };
        let end = collection.end_time;
        self.clock.advance_to(end);

        let mut items: Vec<Option<WorkItem>> = items.into_iter().map(Some).collect();
        let mut fresh: Vec<WorkItem> = collection
            .arrived
            .iter()
            .map(|&i| items[i].take().expect("each item collected once"))
            .collect();
        fresh.sort_by_key(|w| w.learner);
        for w in items.into_iter().flatten() {
            let mut w = w;
            if !w.dropped() && !cfg.stale_updates {
                w.discard = true;
            }
            self.in_flight.push(w);
        }
        self.release(t, end);

        let mut accepted = Vec::new();
        if cfg.stale_updates {
            let threshold = cfg.staleness_threshold.0;
            let (keep, over): (Vec<WorkItem>, Vec<WorkItem>) = std::mem::take(&mut self.stale_buffer)
                .into_iter()
                .partition(|w| threshold.is_none_or(|h| t - w.origin_round <= h));
            for w in over {
                self.charge(&w, Disposition::Discarded);
            }
            accepted = keep;
        }

        let success = match cfg.mode {
            Mode::Oc => collection.success,
            Mode::Dl => fresh.len() + accepted.len() >= min_success,
        };
        for w in &fresh {
            self.finish_upload(w, t);
        }
        let outcome = if success {
            let to_record = |w: &WorkItem| {
                let u = w.update.as_ref().expect("uploaded items carry an update");
                UpdateRecord::new(w.learner, u.delta.clone(), w.origin_round, t, u.samples_processed)
            };
            let fresh_rec: Vec<UpdateRecord> = fresh.iter().map(to_record).collect();
            let stale_rec: Vec<UpdateRecord> = accepted.iter().map(to_record).collect();
            let delta = if cfg.stale_updates {
                aggregate_mixed_with(&fresh_rec, &stale_rec, cfg.scaling_rule()?, cfg.sample_weighted)
            } else {
                aggregate_fresh(&fresh_rec)
            };
            if let Some(delta) = delta {
                let next = server_update(&self.x, &delta, cfg.staleness_policy().server_lr);
                if !next.is_finite() {
                    return Err(Error::Numeric(format!("non-finite global model after round {t}")));
                }
                self.x = next;
            }
            for w in &fresh {
                self.charge(w, Disposition::Fresh);
            }
            for w in &accepted {
                self.charge(w, Disposition::StaleUsed);
            }
            RoundOutcome::Success
        } else {
            for w in &fresh {
                self.charge(w, Disposition::Discarded);
            }
            self.stale_buffer = accepted;
            RoundOutcome::Failed
        };
        self.mu = update_round_duration(self.mu, end - start, cfg.alpha);
        Ok(outcome)
    }

    /// Settles in-flight work resolved by `boundary`: dropouts and abandoned
    /// results become wastage, usable stale results go to the buffer.
    /// Work that can no longer arrive within the staleness threshold is
    /// abandoned at the boundary and the learner re-synchronized.
    fn release(&mut self, t: u64, boundary: f64) {
        if let (true, Some(h)) = (self.config.stale_updates, self.config.staleness_threshold.0) {
            for w in &mut self.in_flight {
                if !w.discard && !w.dropped() && w.resolve_time() > boundary && t + 1 - w.origin_round > h {
                    w.abandon(boundary);
                }
            }
        }
        let matured = track_stragglers(&mut self.in_flight, boundary, t);
        for w in matured.discarded {
            if !w.dropped() {
                self.finish_upload(&w, t);
            } else {
                self.busy[w.learner] = false;
            }
            self.charge(&w, Disposition::Discarded);
        }
        for w in matured.stale {
            self.finish_upload(&w, t);
            self.stale_buffer.push(w);
        }
        self.stale_buffer.sort_by_key(|w| (w.learner, w.origin_round));
    }

    fn finish_upload(&mut self, w: &WorkItem, t: u64) {
        self.busy[w.learner] = false;
        if let Some(u) = &w.update {
            self.last_loss[w.learner] = Some(u.mean_loss);
        }
        start_cooldown(&mut self.learners[w.learner], t, self.config.cooldown);
    }

    fn charge(&mut self, w: &WorkItem, disposition: Disposition) {
        let (compute, comm) = w.spent();
        self.log.record_work(w.learner, compute, comm, disposition);
        match disposition {
            Disposition::Fresh => self.work.fresh += 1,
            Disposition::StaleUsed => self.work.stale_used += 1,
            Disposition::Discarded => self.work.discarded += 1,
        }
    }
}

fn expected_completion(config: &ExperimentConfig, l: &Learner) -> f64 {
    completion_time(&l.profile, samples_per_round(config, l.shard.len()), config.model_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (ExperimentConfig, Dataset) {
        let c = ExperimentConfig {
            n_learners: 20,
            n0: 5,
            rounds: 15,
            cooldown: 0,
            ..Default::default()
        };
        let d = c.build_dataset().unwrap();
        (c, d)
    }

    #[test]
    fn rows_conserve_resource() {
        let (c, d) = small();
        let out = run_experiment(&c, &d).unwrap();
        assert_eq!(out.log.rows().len(), 16);
        assert!(out.log.rows().iter().all(|r| r.is_conserved()));
        assert!(out.work.fresh >= 5 * 15);
    }

    #[test]
    fn oc_dispatches_overcommitted_count() {
        let (c, d) = small();
        let out = run_experiment(&c, &d).unwrap();
        let r1 = &out.log.rows()[1];
        assert_eq!(r1.n_fresh, 5);
        // 7 dispatched in round 1; the two stragglers are abandoned
        assert_eq!(out.work.dispatched, 7 * 15);
    }

    #[test]
    fn training_improves_accuracy() {
        let (mut c, d) = small();
        c.rounds = 40;
        let out = run_experiment(&c, &d).unwrap();
        let rows = out.log.rows();
        assert!(rows.last().unwrap().test_accuracy > rows[0].test_accuracy + 0.2);
    }

    #[test]
    fn dl_with_stale_updates_uses_stale_work() {
        let (mut c, d) = small();
        c.mode = Mode::Dl;
        c.deadline = Some(15.0);
        c.stale_updates = true;
        c.rounds = 30;
        c.cooldown = 0;
        let out = run_experiment(&c, &d).unwrap();
        assert!(out.work.stale_used > 0, "{:?}", out.work);
        assert!(out.log.rows().iter().all(|r| r.is_conserved()));
    }

    #[test]
    fn dynamic_availability_runs_and_skips() {
        let (mut c, d) = small();
        c.availability = AvailabilityScenario::DynAvail;
        c.rounds = 50;
        let out = run_experiment(&c, &d).unwrap();
        assert!(out.log.rows().iter().any(|r| r.round_outcome == RoundOutcome::Skipped));
        assert!(out.log.rows().windows(2).all(|w| w[1].sim_time_s > w[0].sim_time_s));
    }

    #[test]
    fn traced_run_matches_plain_run() {
        let (c, d) = small();
        let a = run_experiment(&c, &d).unwrap();
        let b = run_experiment_traced(&c, &d).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(b.trajectory.len(), c.rounds + 1);
        assert_eq!(b.trajectory.last(), Some(&b.final_params));
    }
}
