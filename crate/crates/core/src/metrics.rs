//! Per-round metrics, resource accounting and result files.
//!
//! Work time is accumulated in integer nanoseconds so that
//! `resource = fresh + stale + wastage` holds exactly on every row.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Non-negative duration in nanoseconds, printed as decimal seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct WorkTime(u64);

impl WorkTime {
    pub const ZERO: WorkTime = WorkTime(0);

    pub fn from_secs(secs: f64) -> Self {
        assert!(secs >= 0.0 && secs.is_finite(), "work time must be finite and >= 0, got {secs}");
        WorkTime((secs * 1e9).round() as u64)
    }

    pub fn from_nanos(ns: u64) -> Self {
        WorkTime(ns)
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1e9
    }
}

impl std::ops::Add for WorkTime {
    type Output = WorkTime;
    fn add(self, rhs: WorkTime) -> WorkTime {
        WorkTime(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for WorkTime {
    fn add_assign(&mut self, rhs: WorkTime) {
        self.0 += rhs.0;
    }
}

impl fmt::Display for WorkTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

impl FromStr for WorkTime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad duration {s:?}"));
        }
        let whole: u64 = whole.parse().map_err(|_| format!("bad duration {s:?}"))?;
        let frac_ns: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<9}").parse().map_err(|_| format!("bad duration {s:?}"))?
        };
        Ok(WorkTime(whole * 1_000_000_000 + frac_ns))
    }
}

impl Serialize for WorkTime {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_secs())
    }
}

impl<'de> Deserialize<'de> for WorkTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let secs = f64::deserialize(d)?;
        if !(secs >= 0.0 && secs.is_finite()) {
            return Err(serde::de::Error::custom("work time must be finite and >= 0"));
        }
        Ok(WorkTime::from_secs(secs))
    }
}

/// Final fate of one dispatched work item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Fresh,
    StaleUsed,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOutcome {
    /// Evaluation of the initial model before any round.
    Initial,
    Success,
    Failed,
    Skipped,
}

impl RoundOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            RoundOutcome::Initial => "initial",
            RoundOutcome::Success => "success",
            RoundOutcome::Failed => "failed",
            RoundOutcome::Skipped => "skipped",
        }
    }
}

impl FromStr for RoundOutcome {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "initial" => Ok(Self::Initial),
            "success" => Ok(Self::Success),
            "failed" => Ok(Self::Failed),
            "skipped" => Ok(Self::Skipped),
            other => Err(format!("unknown round outcome {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRow {
    pub round: u64,
    pub sim_time_s: f64,
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub cumulative_resource_s: WorkTime,
    pub cumulative_wastage_s: WorkTime,
    pub cumulative_fresh_s: WorkTime,
    pub cumulative_stale_s: WorkTime,
    pub unique_participants: usize,
    pub n_fresh: usize,
    pub n_stale: usize,
    pub n_discarded: usize,
    pub round_outcome: RoundOutcome,
}

pub const CSV_HEADER: &str = "round,sim_time_s,test_accuracy,train_loss,cumulative_resource_s,\
cumulative_wastage_s,cumulative_fresh_s,cumulative_stale_s,unique_participants,n_fresh,n_stale,\
n_discarded,round_outcome";

impl RoundRow {
    /// `resource == fresh + stale + wastage`, in integer nanoseconds.
    pub fn is_conserved(&self) -> bool {
        self.cumulative_resource_s
            == self.cumulative_fresh_s + self.cumulative_stale_s + self.cumulative_wastage_s
    }

    pub fn wastage_ratio(&self) -> f64 {
        let r = self.cumulative_resource_s.nanos();
        if r == 0 {
            0.0
        } else {
            self.cumulative_wastage_s.nanos() as f64 / r as f64
        }
    }

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.sim_time_s,
            self.test_accuracy,
            self.train_loss,
            self.cumulative_resource_s,
            self.cumulative_wastage_s,
            self.cumulative_fresh_s,
            self.cumulative_stale_s,
            self.unique_participants,
            self.n_fresh,
            self.n_stale,
            self.n_discarded,
            self.round_outcome.as_str()
        )
    }

    fn from_csv(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(format!("expected 13 fields, found {}", f.len()));
        }
        fn num<T: FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {name} value {s:?}"))
        }
        Ok(RoundRow {
            round: num(f[0], "round")?,
            sim_time_s: num(f[1], "sim_time_s")?,
            test_accuracy: num(f[2], "test_accuracy")?,
            train_loss: num(f[3], "train_loss")?,
            cumulative_resource_s: f[4].parse()?,
            cumulative_wastage_s: f[5].parse()?,
            cumulative_fresh_s: f[6].parse()?,
            cumulative_stale_s: f[7].parse()?,
            unique_participants: num(f[8], "unique_participants")?,
            n_fresh: num(f[9], "n_fresh")?,
            n_stale: num(f[10], "n_stale")?,
            n_discarded: num(f[11], "n_discarded")?,
            round_outcome: f[12].parse()?,
        })
    }
}

/// Accumulates work dispositions during a round and closes rounds into rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<RoundRow>,
    fresh: WorkTime,
    stale: WorkTime,
    wastage: WorkTime,
    participants: BTreeSet<usize>,
    round_fresh: usize,
    round_stale: usize,
    round_discarded: usize,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a log from rows; accumulators resume from the last row.
    pub fn from_rows(rows: Vec<RoundRow>) -> Self {
        let mut log = MetricsLog::default();
        if let Some(last) = rows.last() {
            log.fresh = last.cumulative_fresh_s;
            log.stale = last.cumulative_stale_s;
            log.wastage = last.cumulative_wastage_s;
        }
        log.rows = rows;
        log
    }

    pub fn rows(&self) -> &[RoundRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&RoundRow> {
        self.rows.last()
    }

    pub fn resource(&self) -> WorkTime {
        self.fresh + self.stale + self.wastage
    }

    pub fn wastage(&self) -> WorkTime {
        self.wastage
    }

    pub fn participants(&self) -> &BTreeSet<usize> {
        &self.participants
    }

    /// Adds `compute_s + comm_s` to resource usage; to wastage as well when
    /// the work was discarded. Aggregated work marks the learner as a
    /// participant.
    pub fn record_work(&mut self, learner: usize, compute_s: f64, comm_s: f64, disposition: Disposition) {
        let t = WorkTime::from_secs(compute_s) + WorkTime::from_secs(comm_s);
        match disposition {
            Disposition::Fresh => {
                self.fresh += t;
                self.round_fresh += 1;
                self.participants.insert(learner);
            }
            Disposition::StaleUsed => {
                self.stale += t;
                self.round_stale += 1;
                self.participants.insert(learner);
            }
            Disposition::Discarded => {
                self.wastage += t;
                self.round_discarded += 1;
            }
        }
    }

    pub fn close_round(
        &mut self,
        round: u64,
        sim_time_s: f64,
        test_accuracy: f64,
        train_loss: f64,
        outcome: RoundOutcome,
    ) -> &RoundRow {
        let row = RoundRow {
            round,
            sim_time_s,
            test_accuracy,
            train_loss,
            cumulative_resource_s: self.resource(),
            cumulative_wastage_s: self.wastage,
            cumulative_fresh_s: self.fresh,
            cumulative_stale_s: self.stale,
            unique_participants: self.participants.len(),
            n_fresh: std::mem::take(&mut self.round_fresh),
            n_stale: std::mem::take(&mut self.round_stale),
            n_discarded: std::mem::take(&mut self.round_discarded),
            round_outcome: outcome,
        };
        self.rows.push(row);
        self.rows.last().expect("just pushed")
    }
}

/// Simulated time and cumulative resource at the first row whose accuracy
/// reaches `target`.
pub fn time_to_accuracy(log: &MetricsLog, target: f64) -> Option<(f64, WorkTime)> {
    log.rows
        .iter()
        .find(|r| r.test_accuracy >= target)
        .map(|r| (r.sim_time_s, r.cumulative_resource_s))
}

/// Distinct learners ever aggregated, over the population size.
pub fn unique_participant_rate(log: &MetricsLog, total_learners: usize) -> f64 {
    assert!(total_learners >= 1, "population must be non-empty");
    log.last()
        .map_or(0.0, |r| r.unique_participants as f64 / total_learners as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

pub fn to_csv_string(log: &MetricsLog) -> String {
    let mut out = String::with_capacity(64 * (log.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &log.rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn from_csv_str(text: &str) -> std::result::Result<MetricsLog, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        Some(h) => return Err(format!("unexpected header {h:?}")),
        None => return Err("empty file".into()),
    }
    let rows = lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| RoundRow::from_csv(l.trim_end()).map_err(|e| format!("line {}: {e}", i + 2)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(MetricsLog::from_rows(rows))
}

pub fn export(log: &MetricsLog, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ExportFormat::Csv => to_csv_string(log),
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&log.rows).map_err(|e| Error::parse(path, e))?;
            s.push('\n');
            s
        }
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn import(path: impl AsRef<Path>, format: ExportFormat) -> Result<MetricsLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ExportFormat::Csv => from_csv_str(&text).map_err(|e| Error::parse(path, e)),
        ExportFormat::Json => {
            let rows: Vec<RoundRow> = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
            Ok(MetricsLog::from_rows(rows))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveAxis {
    /// Cumulative resource usage (seconds) against test accuracy.
    Resource,
    /// Simulated wall time (seconds) against test accuracy.
    Time,
}

/// Two-column whitespace-separated file for gnuplot.
pub fn write_curve(log: &MetricsLog, path: impl AsRef<Path>, axis: CurveAxis) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let label = match axis {
        CurveAxis::Resource => "resource_s",
        CurveAxis::Time => "sim_time_s",
    };
    let mut body = format!("# {label} test_accuracy\n");
    for r in &log.rows {
        let x = match axis {
            CurveAxis::Resource => r.cumulative_resource_s.to_string(),
            CurveAxis::Time => r.sim_time_s.to_string(),
        };
        body.push_str(&format!("{x} {}\n", r.test_accuracy));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}
