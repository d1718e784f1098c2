//! Named, pre-registered experiment sets. Each scenario runs a few arms over
//! fixed seeds and checks the averaged results against frozen bands.

use rayon::prelude::*;

use crate::engine::{
    run_experiment, AvailabilityScenario, ExperimentConfig, LabelDistributionKind, Mode,
    PartitionKind, RuleKind, Threshold,
};
use crate::error::{Error, Result};
use crate::metrics::{time_to_accuracy, unique_participant_rate};
use crate::selection::SelectorKind;

pub const NAMES: [&str; 5] = [
    "safa_wastage",
    "priority_vs_random_noniid",
    "scaling_rules",
    "apt_tradeoff",
    "hw_advance",
];

pub const SEEDS: [u64; 3] = [1, 2, 3];

/// Final-row statistics of one arm, averaged over [`SEEDS`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub label: String,
    pub final_accuracy: f64,
    pub wastage_ratio: f64,
    pub unique_rate: f64,
    pub resource_s: f64,
    pub sim_time_s: f64,
    /// Simulated seconds to reach the scenario's target accuracy (mean over
    /// seeds that reach it).
    pub time_to_target: Option<f64>,
    pub per_seed_wastage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: &'static str,
    pub arms: Vec<ArmSummary>,
    pub checks: Vec<Check>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn arm(&self, label: &str) -> &ArmSummary {
        self.arms
            .iter()
            .find(|a| a.label == label)
            .unwrap_or_else(|| panic!("no arm {label} in {}", self.name))
    }
}

/// Select-all with a 10% completion target and staleness threshold 5 on a
/// population with a steep compute tail.
pub fn safa_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "safa_wastage".into(),
        seed,
        n_learners: 200,
        rounds: 200,
        cluster_ratio: 6.0,
        model_bytes: 100_000,
        selector: SelectorKind::All,
        target_ratio: Some(0.1),
        stale_updates: true,
        staleness_threshold: Threshold(Some(5)),
        rule: RuleKind::Equal,
        cooldown: 0,
        ..Default::default()
    }
}

/// The same population under priority selection with unbounded staleness.
pub fn safa_priority_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "safa_priority".into(),
        selector: SelectorKind::Priority,
        target_ratio: None,
        n0: 20,
        staleness_threshold: Threshold(None),
        rule: RuleKind::Hybrid,
        cooldown: 5,
        ..safa_config(seed)
    }
}

/// One label per learner, hour-long availability cycles.
pub fn noniid_config(selector: SelectorKind, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("noniid_{}", selector_name(selector)),
        seed,
        n_learners: 300,
        rounds: 500,
        n0: 5,
        partition: PartitionKind::LabelLimited,
        label_distribution: LabelDistributionKind::Uniform,
        availability: AvailabilityScenario::DynAvail,
        trace_period: 3600.0,
        selector,
        ..Default::default()
    }
}

/// Deadline rounds with stale updates folded in under `rule`.
pub fn scaling_config(rule: RuleKind, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("scaling_{}", rule_name(rule)),
        seed,
        n_learners: 100,
        rounds: 150,
        mode: Mode::Dl,
        deadline: Some(6.0),
        partition: PartitionKind::LabelLimited,
        label_fraction: 0.5,
        stale_updates: true,
        rule,
        ..Default::default()
    }
}

pub fn apt_config(apt: bool, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("apt_{}", if apt { "on" } else { "off" }),
        seed,
        n_learners: 100,
        rounds: 200,
        n0: 10,
        selector: SelectorKind::Priority,
        stale_updates: true,
        apt,
        ..Default::default()
    }
}

pub fn hw_config(fraction: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("hw_{:.0}", fraction * 100.0),
        seed,
        n_learners: 100,
        rounds: 150,
        hardware_advance: fraction,
        ..Default::default()
    }
}

fn selector_name(s: SelectorKind) -> &'static str {
    match s {
        SelectorKind::Random => "random",
        SelectorKind::Priority => "priority",
        SelectorKind::Utility => "utility",
        SelectorKind::All => "all",
    }
}

fn rule_name(r: RuleKind) -> &'static str {
    match r {
        RuleKind::Equal => "equal",
        RuleKind::Dynsgd => "dynsgd",
        RuleKind::Adasgd => "adasgd",
        RuleKind::Hybrid => "hybrid",
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Runs `make(seed)` for every seed and averages the final rows.
pub fn run_arm(
    label: &str,
    target: Option<f64>,
    make: impl Fn(u64) -> ExperimentConfig + Sync,
) -> Result<ArmSummary> {
    let runs: Vec<_> = SEEDS
        .par_iter()
        .map(|&seed| {
            let config = make(seed);
            let dataset = config.build_dataset()?;
            let out = run_experiment(&config, &dataset)?;
            let row = out.log.last().expect("initial row").clone();
            let unique = unique_participant_rate(&out.log, config.n_learners);
            let ttt = target.and_then(|t| time_to_accuracy(&out.log, t)).map(|(s, _)| s);
            Ok((row, unique, ttt))
        })
        .collect::<Result<Vec<_>>>()?;
    let reached: Vec<f64> = runs.iter().filter_map(|r| r.2).collect();
    Ok(ArmSummary {
        label: label.to_string(),
        final_accuracy: mean(runs.iter().map(|r| r.0.test_accuracy)),
        wastage_ratio: mean(runs.iter().map(|r| r.0.wastage_ratio())),
        unique_rate: mean(runs.iter().map(|r| r.1)),
        resource_s: mean(runs.iter().map(|r| r.0.cumulative_resource_s.as_secs())),
        sim_time_s: mean(runs.iter().map(|r| r.0.sim_time_s)),
        time_to_target: (!reached.is_empty()).then(|| mean(reached.iter().copied())),
        per_seed_wastage: runs.iter().map(|r| r.0.wastage_ratio()).collect(),
    })
}

fn check(label: impl Into<String>, passed: bool) -> Check {
    Check {
        label: label.into(),
        passed,
    }
}

pub fn run_scenario(name: &str) -> Result<ScenarioReport> {
    match name {
        "safa_wastage" => safa_wastage(),
        "priority_vs_random_noniid" => priority_vs_random_noniid(),
        "scaling_rules" => scaling_rules(),
        "apt_tradeoff" => apt_tradeoff(),
        "hw_advance" => hw_advance(),
        other => Err(Error::config(format!(
            "unknown scenario {other:?}; valid names: {}",
            NAMES.join(", ")
        ))),
    }
}

fn safa_wastage() -> Result<ScenarioReport> {
    let safa = run_arm("all", None, safa_config)?;
    let prio = run_arm("priority", None, safa_priority_config)?;
    let checks = vec![
        check(
            format!("select-all wastage ratio {:.3} in [0.6, 0.9]", safa.wastage_ratio),
            (0.6..=0.9).contains(&safa.wastage_ratio),
        ),
        check(
            format!(
                "select-all wastage {:.3} >= 3 x priority wastage {:.3}",
                safa.wastage_ratio, prio.wastage_ratio
            ),
            safa.wastage_ratio >= 3.0 * prio.wastage_ratio,
        ),
    ];
    Ok(ScenarioReport {
        name: "safa_wastage",
        arms: vec![safa, prio],
        checks,
    })
}

fn priority_vs_random_noniid() -> Result<ScenarioReport> {
    let arms = [SelectorKind::Priority, SelectorKind::Utility, SelectorKind::Random]
        .into_iter()
        .map(|s| run_arm(selector_name(s), None, |seed| noniid_config(s, seed)))
        .collect::<Result<Vec<_>>>()?;
    let (p, u) = (&arms[0], &arms[1]);
    let checks = vec![
        check(
            format!("priority accuracy {:.3} >= utility {:.3}", p.final_accuracy, u.final_accuracy),
            p.final_accuracy >= u.final_accuracy,
        ),
        check(
            format!("priority unique rate {:.3} >= utility {:.3}", p.unique_rate, u.unique_rate),
            p.unique_rate >= u.unique_rate,
        ),
    ];
    Ok(ScenarioReport {
        name: "priority_vs_random_noniid",
        arms,
        checks,
    })
}

fn scaling_rules() -> Result<ScenarioReport> {
    let arms = [RuleKind::Equal, RuleKind::Dynsgd, RuleKind::Adasgd, RuleKind::Hybrid]
        .into_iter()
        .map(|r| run_arm(rule_name(r), None, |seed| scaling_config(r, seed)))
        .collect::<Result<Vec<_>>>()?;
    let checks = arms
        .iter()
        .map(|a| {
            check(
                format!("{} final accuracy {:.3} >= 0.8", a.label, a.final_accuracy),
                a.final_accuracy >= 0.8,
            )
        })
        .collect();
    Ok(ScenarioReport {
        name: "scaling_rules",
        arms,
        checks,
    })
}

fn apt_tradeoff() -> Result<ScenarioReport> {
    let on = run_arm("apt_on", None, |seed| apt_config(true, seed))?;
    let off = run_arm("apt_off", None, |seed| apt_config(false, seed))?;
    let checks = vec![
        check(
            format!("APT resource {:.0} s < fixed target {:.0} s", on.resource_s, off.resource_s),
            on.resource_s < off.resource_s,
        ),
        check(
            format!(
                "APT accuracy {:.3} within 0.05 of fixed target {:.3}",
                on.final_accuracy, off.final_accuracy
            ),
            on.final_accuracy >= off.final_accuracy - 0.05,
        ),
    ];
    Ok(ScenarioReport {
        name: "apt_tradeoff",
        arms: vec![on, off],
        checks,
    })
}

fn hw_advance() -> Result<ScenarioReport> {
    let base = run_arm("hw_0", None, |seed| hw_config(0.0, seed))?;
    let fast = run_arm("hw_25", None, |seed| hw_config(0.25, seed))?;
    let checks = vec![
        check(
            format!("faster top quarter does not lengthen the run: {:.0} s <= {:.0} s", fast.sim_time_s, base.sim_time_s),
            fast.sim_time_s <= base.sim_time_s,
        ),
        check(
            format!("faster top quarter lowers resource use: {:.0} s < {:.0} s", fast.resource_s, base.resource_s),
            fast.resource_s < base.resource_s,
        ),
    ];
    Ok(ScenarioReport {
        name: "hw_advance",
        arms: vec![base, fast],
        checks,
    })
}
