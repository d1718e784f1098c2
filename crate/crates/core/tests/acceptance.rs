//! Acceptance gate: one line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use fedsim_core::aggregation::{
    check_virtual_iterate, deviation_score, mixed_weights, run_stale_synchronous, staleness_weight,
    DelayModel, StaleSyncConfig,
};
use fedsim_core::engine::{
    build_population, run_experiment, run_experiment_traced, AvailabilityScenario, Mode,
    PartitionKind, RuleKind, Threshold,
};
use fedsim_core::metrics::to_csv_string;
use fedsim_core::model_data::{
    evaluate, generate_dataset, local_update, loss_and_gradient, partition, DEFAULT_SPREAD,
};
use fedsim_core::rng::{derive_seed, rng_from, stream};
use fedsim_core::selection::{adaptive_participant_target, select_random, update_round_duration};
use fedsim_core::{
    scenarios, CheckIn, Dataset, ExperimentConfig, ParameterVector, PartitionSpec, ScalingRule,
    SelectorKind, UpdateRecord,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let e = start.elapsed();
    (e < limit, format!("{:.2?} of {:?}", e, limit))
}

/// Plain synchronous FedAvg over the population the engine would build.
fn fedavg_reference(config: &ExperimentConfig, dataset: &Dataset) -> Vec<ParameterVector> {
    let pop = build_population(config, dataset).unwrap();
    let n = pop.learners.len();
    let mut x = ParameterVector::zeros(dataset.param_len());
    let mut trajectory = vec![x.clone()];
    for t in 1..=config.rounds as u64 {
        let mut ids: Vec<usize> = if config.n0 >= n {
            (0..n).collect()
        } else {
            let pool: Vec<CheckIn> = (0..n)
                .map(|id| CheckIn {
                    learner_id: id,
                    availability_prob: 1.0,
                    last_loss: None,
                    expected_completion: 0.0,
                })
                .collect();
            select_random(&pool, config.n0, derive_seed(config.seed, &[stream::SELECTION, t])).participants
        };
        ids.sort_unstable();
        let mut sum = ParameterVector::zeros(x.len());
        for &id in &ids {
            let seed = derive_seed(config.seed, &[stream::LOCAL_TRAINING, t, id as u64]);
            let shard = &pop.learners[id].shard;
            let u = local_update(&x, dataset, shard, config.gamma, config.local_steps, config.batch_size, seed)
                .unwrap();
            sum.add_scaled(1.0, &u.delta);
        }
        sum.scale(1.0 / ids.len() as f64);
        x.add_scaled(1.0, &sum);
        trajectory.push(x.clone());
    }
    trajectory
}

fn fedavg_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n0 in [10, 5] {
        let config = ExperimentConfig {
            n_learners: 10,
            n0,
            rounds: 50,
            overcommit_factor: 1.0,
            cooldown: 0,
            selector: SelectorKind::Random,
            availability: AvailabilityScenario::AllAvail,
            stale_updates: false,
            server_lr: 1.0,
            seed: 7,
            ..Default::default()
        };
        let dataset = generate_dataset(4, 8, 250, DEFAULT_SPREAD, 11).unwrap();
        let engine = run_experiment_traced(&config, &dataset).unwrap().trajectory;
        let reference = fedavg_reference(&config, &dataset);
        assert_eq!(engine.len(), reference.len());
        for (a, b) in engine.iter().zip(&reference) {
            worst = worst.max(a.max_abs_diff(b));
        }
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    outcome(worst <= 1e-12 && fast, format!("max coordinate diff {worst:.3e}, {time}"))
}

fn virtual_iterate() -> Outcome {
    let start = Instant::now();
    let dataset = generate_dataset(4, 8, 250, DEFAULT_SPREAD, 3).unwrap();
    let split = dataset.train_test_split(5);
    let shards = partition(&dataset, &split.train, 3, &PartitionSpec::UniformIid, 9).unwrap();
    let cfg = StaleSyncConfig {
        gamma: 0.05,
        local_steps: 2,
        batch_size: 10,
        rounds: 20,
        delay: DelayModel::Constant(2),
        rule: ScalingRule::Equal,
        server_lr: 1.0,
        seed: 13,
    };
    let run = run_stale_synchronous(&dataset, &shards, &ParameterVector::zeros(dataset.param_len()), &cfg).unwrap();
    let dev = check_virtual_iterate(&run.history).unwrap();
    let (fast, time) = within(Duration::from_secs(5), start);
    outcome(dev < 1e-7 && fast, format!("max deviation {dev:.3e}, {time}"))
}

fn random_update(rng: &mut impl Rng, id: usize, len: usize, tau: u64) -> UpdateRecord {
    let v = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    UpdateRecord::new(id, ParameterVector::from_vec(v), 100, 100 + tau, rng.random_range(1..50))
}

fn scaling_rules() -> Outcome {
    let hybrid = ScalingRule::Hybrid { beta: 0.35 };
    let cases = [
        (staleness_weight(ScalingRule::DynSgd, 4, 0.0, 0.0), 0.2),
        (staleness_weight(ScalingRule::AdaSgd, 0, 0.0, 0.0), (-1.0f64).exp()),
        (
            staleness_weight(hybrid, 2, 0.7, 0.7),
            0.65 / 3.0 + 0.35 * (1.0 - (-1.0f64).exp()),
        ),
    ];
    let unit_err = cases.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut rng = rng_from(17);
    let rules = [ScalingRule::Equal, ScalingRule::DynSgd, ScalingRule::AdaSgd, hybrid];
    let mut sum_err: f64 = 0.0;
    for case in 0..1000 {
        let len = rng.random_range(1..12);
        let n_fresh = rng.random_range(0..6);
        let n_stale = rng.random_range(usize::from(n_fresh == 0)..6);
        let fresh: Vec<_> = (0..n_fresh).map(|i| random_update(&mut rng, i, len, 0)).collect();
        let stale: Vec<_> = (0..n_stale)
            .map(|i| {
                let tau = rng.random_range(1..20);
                random_update(&mut rng, 10 + i, len, tau)
            })
            .collect();
        let w = mixed_weights(&fresh, &stale, rules[case % 4], case % 3 == 0);
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    outcome(
        unit_err <= 1e-12 && sum_err <= 1e-12,
        format!("unit values err {unit_err:.3e}, weight sums err {sum_err:.3e} over 1000 mixes"),
    )
}

fn lambda_identity() -> Outcome {
    let mut rng = rng_from(23);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(1..40);
        let n = rng.random_range(1..30);
        let mean = ParameterVector::from_vec((0..len).map(|_| rng.random_range(-2.0..2.0)).collect());
        let stale = ParameterVector::from_vec((0..len).map(|_| rng.random_range(-2.0..2.0)).collect());
        let closed = mean.sub(&stale).norm_sq() / ((n as f64 + 1.0).powi(2) * mean.norm_sq());
        let got = deviation_score(&mean, n, &stale);
        worst = worst.max((got - closed).abs() / closed.abs().max(f64::MIN_POSITIVE));
    }
    outcome(worst < 1e-10, format!("max relative error {worst:.3e} over 100 triples"))
}

fn gradient_check() -> Outcome {
    let mut rng = rng_from(29);
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let classes = rng.random_range(2..6);
        let dim = rng.random_range(1..7);
        let d = generate_dataset(classes, dim, 6, 1.0, 1000 + case).unwrap();
        let batch: Vec<usize> = (0..rng.random_range(1..d.len())).map(|_| rng.random_range(0..d.len())).collect();
        let x = ParameterVector::from_vec((0..d.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (_, g) = loss_and_gradient(&x, &d, &batch).unwrap();
        let h = 1e-5;
        let mut fd = vec![0.0; x.len()];
        for (j, slot) in fd.iter_mut().enumerate() {
            let mut up = x.clone();
            up.values_mut()[j] += h;
            let mut down = x.clone();
            down.values_mut()[j] -= h;
            let (lu, _) = loss_and_gradient(&up, &d, &batch).unwrap();
            let (ld, _) = loss_and_gradient(&down, &d, &batch).unwrap();
            *slot = (lu - ld) / (2.0 * h);
        }
        let fd = ParameterVector::from_vec(fd);
        let rel = fd.sub(&g).norm_sq().sqrt() / g.norm_sq().sqrt().max(fd.norm_sq().sqrt()).max(1e-12);
        worst = worst.max(rel);
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.3e} over 100 cases"))
}

fn convergence_sanity() -> Outcome {
    let start = Instant::now();
    let dataset = generate_dataset(4, 8, 250, DEFAULT_SPREAD, 31).unwrap();
    let split = dataset.train_test_split(37);
    let shards = partition(&dataset, &split.train, 10, &PartitionSpec::UniformIid, 41).unwrap();
    let x0 = ParameterVector::zeros(dataset.param_len());
    let base = StaleSyncConfig {
        gamma: 0.05,
        local_steps: 10,
        batch_size: 10,
        rounds: 300,
        delay: DelayModel::Constant(0),
        rule: ScalingRule::DynSgd,
        server_lr: 1.0,
        seed: 43,
    };
    let sync = run_stale_synchronous(&dataset, &shards, &x0, &base).unwrap();
    let stale_cfg = StaleSyncConfig {
        delay: DelayModel::Bounded(3),
        ..base
    };
    let stale = run_stale_synchronous(&dataset, &shards, &x0, &stale_cfg).unwrap();
    let a_sync = evaluate(&sync.final_params, &dataset, &split.test).unwrap();
    let a_stale = evaluate(&stale.final_params, &dataset, &split.test).unwrap();
    let (fast, time) = within(Duration::from_secs(60), start);
    outcome(
        (a_sync - a_stale).abs() <= 0.02 && fast,
        format!("synchronous {a_sync:.4}, stale (tau <= 3) {a_stale:.4}, {time}"),
    )
}

fn scenario(name: &str, limit: Duration) -> Outcome {
    let start = Instant::now();
    let report = scenarios::run_scenario(name).unwrap();
    let (fast, time) = within(limit, start);
    let detail: Vec<String> = report
        .checks
        .iter()
        .map(|c| format!("{}{}", if c.passed { "" } else { "NOT " }, c.label))
        .collect();
    outcome(report.passed() && fast, format!("{}; {time}", detail.join("; ")))
}

fn apt_property() -> Outcome {
    let mut rng = rng_from(47);
    let mut bad = 0;
    let mut mu_err: f64 = 0.0;
    for _ in 0..10_000 {
        let n0 = rng.random_range(1..200);
        let mu = rng.random_range(0.0..500.0);
        let rts: Vec<f64> = (0..rng.random_range(0..300)).map(|_| rng.random_range(0.0..1000.0)).collect();
        let b = rts.iter().filter(|&&rt| rt <= mu).count() as i64;
        let expect = (n0 as i64 - b).max(1) as usize;
        let got = adaptive_participant_target(n0, &rts, mu);
        if got != expect || !(1..=n0).contains(&got) {
            bad += 1;
        }
        let alpha = rng.random_range(0.0..=1.0);
        let d = rng.random_range(0.0..1000.0);
        mu_err = mu_err.max((update_round_duration(mu, d, alpha) - ((1.0 - alpha) * d + alpha * mu)).abs());
    }
    outcome(
        bad == 0 && mu_err <= 1e-12,
        format!("{bad} target mismatches in 10000 cases, duration update err {mu_err:.3e}"),
    )
}

fn determinism_and_conservation() -> Outcome {
    let configs = [
        ExperimentConfig {
            rounds: 40,
            ..Default::default()
        },
        ExperimentConfig {
            name: "dl_saa".into(),
            rounds: 60,
            mode: Mode::Dl,
            deadline: Some(8.0),
            stale_updates: true,
            apt: true,
            straggler_probe_noise: 0.2,
            predictor_noise: 0.1,
            selector: SelectorKind::Priority,
            availability: AvailabilityScenario::DynAvail,
            trace_period: 3600.0,
            ..Default::default()
        },
        ExperimentConfig {
            rounds: 60,
            ..scenarios::safa_config(3)
        },
        ExperimentConfig {
            name: "zipf_utility".into(),
            rounds: 60,
            partition: PartitionKind::LabelLimited,
            label_fraction: 0.5,
            label_distribution: fedsim_core::engine::LabelDistributionKind::Zipf,
            selector: SelectorKind::Utility,
            stale_updates: true,
            rule: RuleKind::Hybrid,
            staleness_threshold: Threshold(Some(3)),
            ..Default::default()
        },
    ];
    let mut identical = 0;
    let mut rows = 0;
    let mut unconserved = 0;
    for config in &configs {
        let dataset = config.build_dataset().unwrap();
        let a = run_experiment(config, &dataset).unwrap();
        let b = run_experiment(config, &dataset).unwrap();
        if to_csv_string(&a.log).as_bytes() == to_csv_string(&b.log).as_bytes() {
            identical += 1;
        }
        for r in a.log.rows() {
            rows += 1;
            let parts = r.cumulative_fresh_s.nanos() + r.cumulative_stale_s.nanos() + r.cumulative_wastage_s.nanos();
            if parts != r.cumulative_resource_s.nanos() || !r.is_conserved() {
                unconserved += 1;
            }
        }
    }
    outcome(
        identical == configs.len() && unconserved == 0,
        format!(
            "{identical}/{} configs byte-identical, {unconserved} of {rows} rows break conservation",
            configs.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("fedavg_equivalence", fedavg_equivalence),
        ("virtual_iterate_identity", virtual_iterate),
        ("scaling_rule_values", scaling_rules),
        ("deviation_score_identity", lambda_identity),
        ("gradient_finite_difference", gradient_check),
        ("stale_convergence_sanity", convergence_sanity),
        ("safa_wastage_direction", || scenario("safa_wastage", Duration::from_secs(120))),
        ("noniid_selection_direction", || {
            scenario("priority_vs_random_noniid", Duration::from_secs(300))
        }),
        ("apt_bounds_and_update", apt_property),
        ("determinism_and_conservation", determinism_and_conservation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {}  {}",
            i + 1,
            name,
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
