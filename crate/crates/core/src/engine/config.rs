use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregation::{ScalingRule, StalenessPolicy};
use crate::error::{Error, Result};
use crate::model_data::{generate_dataset, Dataset, LabelDistribution, PartitionSpec};
use crate::population::{ProfileParams, TraceParams, DEFAULT_PERIOD};
use crate::selection::SelectorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Over-commit: dispatch `ceil(overcommit_factor * N_t)` and end the round
    /// at the `N_t`-th completion.
    Oc,
    /// Deadline: dispatch `N_t` and end the round after `deadline` seconds.
    Dl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvailabilityScenario {
    AllAvail,
    DynAvail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    UniformIid,
    LabelLimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDistributionKind {
    Balanced,
    Uniform,
    Zipf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Equal,
    Dynsgd,
    Adasgd,
    Hybrid,
}

/// Staleness threshold in rounds; written as an integer or `"unbounded"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdRepr", into = "ThresholdRepr")]
pub struct Threshold(pub Option<u64>);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Rounds(u64),
    Word(String),
}

impl TryFrom<ThresholdRepr> for Threshold {
    type Error = String;
    fn try_from(r: ThresholdRepr) -> std::result::Result<Self, String> {
        match r {
            ThresholdRepr::Rounds(h) => Ok(Threshold(Some(h))),
            ThresholdRepr::Word(w) if w == "unbounded" => Ok(Threshold(None)),
            ThresholdRepr::Word(w) => Err(format!(
                "staleness_threshold must be a non-negative integer or \"unbounded\", got {w:?}"
            )),
        }
    }
}

impl From<Threshold> for ThresholdRepr {
    fn from(t: Threshold) -> Self {
        match t.0 {
            Some(h) => ThresholdRepr::Rounds(h),
            None => ThresholdRepr::Word("unbounded".into()),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(h) => write!(f, "{h}"),
            None => f.write_str("unbounded"),
        }
    }
}

/// One experiment. Field names double as the keys of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Number of consecutive seeds the CLI runs, starting at `seed`.
    pub seeds: u64,

    // data
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub partition: PartitionKind,
    pub label_fraction: f64,
    pub label_distribution: LabelDistributionKind,
    pub zipf_alpha: f64,

    // population
    pub n_learners: usize,
    pub availability: AvailabilityScenario,
    pub trace_file: Option<PathBuf>,
    pub trace_period: f64,
    pub short_session_fraction: f64,
    pub sessions_min: usize,
    pub sessions_max: usize,
    /// Half-width of uniform noise added to predicted availability.
    pub predictor_noise: f64,
    pub base_compute: f64,
    pub cluster_ratio: f64,
    pub model_bytes: u64,
    /// Fraction of fastest devices whose completion time is halved.
    pub hardware_advance: f64,

    // rounds
    pub rounds: usize,
    pub n0: usize,
    pub mode: Mode,
    pub overcommit_factor: f64,
    pub deadline: Option<f64>,
    /// OC: fraction of dispatched (selector `all`) or of `N_t` that ends a
    /// round. DL: minimum success ratio (default 0.8).
    pub target_ratio: Option<f64>,
    /// Clock advance when nobody can check in.
    pub selection_window: f64,
    pub selector: SelectorKind,
    pub exploration_fraction: f64,
    pub deadline_pref: Option<f64>,
    /// Adaptive participant target.
    pub apt: bool,
    /// Half-width of multiplicative noise on probed straggler remaining time.
    pub straggler_probe_noise: f64,
    pub alpha: f64,
    pub cooldown: u64,

    // aggregation
    /// Accept stragglers' late updates (staleness-aware aggregation).
    pub stale_updates: bool,
    pub rule: RuleKind,
    pub beta: f64,
    pub staleness_threshold: Threshold,
    pub server_lr: f64,
    /// Use `gamma` as the server step size, which applies the learning rate twice.
    pub literal_alg2: bool,
    pub sample_weighted: bool,

    // training
    pub gamma: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
            seeds: 1,
            classes: 4,
            dim: 8,
            per_class: 250,
            spread: crate::model_data::DEFAULT_SPREAD,
            partition: PartitionKind::UniformIid,
            label_fraction: 0.1,
            label_distribution: LabelDistributionKind::Balanced,
            zipf_alpha: 1.95,
            n_learners: 100,
            availability: AvailabilityScenario::AllAvail,
            trace_file: None,
            trace_period: DEFAULT_PERIOD,
            short_session_fraction: 0.7,
            sessions_min: TraceParams::default().sessions_min,
            sessions_max: TraceParams::default().sessions_max,
            predictor_noise: 0.0,
            base_compute: ProfileParams::default().base_compute,
            cluster_ratio: ProfileParams::default().cluster_ratio,
            model_bytes: 1_000_000,
            hardware_advance: 0.0,
            rounds: 100,
            n0: 10,
            mode: Mode::Oc,
            overcommit_factor: 1.3,
            deadline: None,
            target_ratio: None,
            selection_window: 30.0,
            selector: SelectorKind::Random,
            exploration_fraction: 0.1,
            deadline_pref: None,
            apt: false,
            straggler_probe_noise: 0.0,
            alpha: 0.25,
            cooldown: 5,
            stale_updates: false,
            rule: RuleKind::Hybrid,
            beta: 0.35,
            staleness_threshold: Threshold(None),
            server_lr: 1.0,
            literal_alg2: false,
            sample_weighted: false,
            gamma: 0.05,
            local_steps: 10,
            batch_size: 10,
            eval_every: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_learners == 0 {
            return fail("n_learners must be >= 1".into());
        }
        if self.n0 == 0 {
            return fail("n0 must be >= 1".into());
        }
        match self.mode {
            Mode::Oc if !(self.overcommit_factor >= 1.0 && self.overcommit_factor.is_finite()) => {
                return fail(format!("OC mode needs overcommit_factor >= 1, got {}", self.overcommit_factor));
            }
            Mode::Dl if !self.deadline.is_some_and(|d| d > 0.0) => {
                return fail("DL mode needs a positive deadline".into());
            }
            _ => {}
        }
        if let Some(d) = self.deadline {
            if !(d > 0.0 && d.is_finite()) {
                return fail(format!("deadline must be > 0, got {d}"));
            }
        }
        if let Some(r) = self.target_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return fail(format!("target_ratio must be in (0, 1], got {r}"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) {
            return fail(format!("exploration_fraction must be in [0, 1], got {}", self.exploration_fraction));
        }
        if !(0.0..=1.0).contains(&self.short_session_fraction) {
            return fail("short_session_fraction must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.hardware_advance) {
            return fail("hardware_advance must be in [0, 1]".into());
        }
        if !(self.server_lr > 0.0) {
            return fail(format!("server_lr must be > 0, got {}", self.server_lr));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.local_steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return fail("local_steps, batch_size and eval_every must be >= 1".into());
        }
        if self.sessions_min > self.sessions_max {
            return fail("sessions_min must not exceed sessions_max".into());
        }
        if !(self.trace_period > 0.0) || !(self.selection_window > 0.0) {
            return fail("trace_period and selection_window must be > 0".into());
        }
        if !(self.base_compute > 0.0) || !(self.cluster_ratio > 0.0) || self.model_bytes == 0 {
            return fail("base_compute, cluster_ratio and model_bytes must be > 0".into());
        }
        if !(self.predictor_noise >= 0.0) || !(0.0..1.0).contains(&self.straggler_probe_noise) {
            return fail("predictor_noise must be >= 0 and straggler_probe_noise in [0, 1)".into());
        }
        self.scaling_rule()?;
        self.partition_spec()?;
        Ok(())
    }

    pub fn scaling_rule(&self) -> Result<ScalingRule> {
        let name = match self.rule {
            RuleKind::Equal => "equal",
            RuleKind::Dynsgd => "dynsgd",
            RuleKind::Adasgd => "adasgd",
            RuleKind::Hybrid => "hybrid",
        };
        ScalingRule::from_name(name, self.beta)
    }

    pub fn staleness_policy(&self) -> StalenessPolicy {
        StalenessPolicy {
            threshold: self.staleness_threshold.0,
            server_lr: if self.literal_alg2 { self.gamma } else { self.server_lr },
        }
    }

    pub fn partition_spec(&self) -> Result<PartitionSpec> {
        Ok(match self.partition {
            PartitionKind::UniformIid => PartitionSpec::UniformIid,
            PartitionKind::LabelLimited => {
                if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
                    return Err(Error::config(format!(
                        "label_fraction must be in (0, 1], got {}",
                        self.label_fraction
                    )));
                }
                let distribution = match self.label_distribution {
                    LabelDistributionKind::Balanced => LabelDistribution::Balanced,
                    LabelDistributionKind::Uniform => LabelDistribution::Uniform,
                    LabelDistributionKind::Zipf => {
                        if !(self.zipf_alpha > 0.0) {
                            return Err(Error::config("zipf_alpha must be > 0"));
                        }
                        LabelDistribution::Zipf { alpha: self.zipf_alpha }
                    }
                };
                PartitionSpec::LabelLimited {
                    label_fraction: self.label_fraction,
                    distribution,
                }
            }
        })
    }

    pub fn profile_params(&self) -> ProfileParams {
        ProfileParams {
            base_compute: self.base_compute,
            cluster_ratio: self.cluster_ratio,
            ..ProfileParams::default()
        }
    }

    pub fn trace_params(&self) -> TraceParams {
        TraceParams {
            sessions_min: self.sessions_min,
            sessions_max: self.sessions_max,
            ..TraceParams::default()
        }
    }

    /// The synthetic dataset described by `classes`, `dim`, `per_class`, `spread`.
    pub fn build_dataset(&self) -> Result<Dataset> {
        generate_dataset(
            self.classes,
            self.dim,
            self.per_class,
            self.spread,
            crate::rng::derive_seed(self.seed, &[crate::rng::stream::DATASET]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn dl_needs_deadline() {
        let c = ExperimentConfig {
            mode: Mode::Dl,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn oc_needs_overcommit_at_least_one() {
        let c = ExperimentConfig {
            overcommit_factor: 0.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn literal_server_step_uses_gamma() {
        let c = ExperimentConfig {
            literal_alg2: true,
            gamma: 0.2,
            ..Default::default()
        };
        assert_eq!(c.staleness_policy().server_lr, 0.2);
    }

    #[test]
    fn threshold_text_forms() {
        #[derive(Deserialize)]
        struct W {
            t: Threshold,
        }
        let w: W = serde_json::from_str(r#"{"t": 5}"#).unwrap();
        assert_eq!(w.t, Threshold(Some(5)));
        let w: W = serde_json::from_str(r#"{"t": "unbounded"}"#).unwrap();
        assert_eq!(w.t, Threshold(None));
        assert!(serde_json::from_str::<W>(r#"{"t": "forever"}"#).is_err());
    }
}
