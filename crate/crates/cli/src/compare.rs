use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use fedsim_core::metrics::{import, time_to_accuracy, ExportFormat};
use fedsim_core::MetricsLog;

const MISSING: &str = "—";

struct Summary {
    name: String,
    accuracy: f64,
    resource: f64,
    wastage: f64,
    to_target: Option<(f64, f64)>,
}

fn load(path: &PathBuf) -> Result<MetricsLog> {
    let format = ExportFormat::from_path(path)
        .ok_or_else(|| anyhow!("{}: expected a .csv or .json log", path.display()))?;
    let log = import(path, format).map_err(|e| anyhow!("schema mismatch: {e}"))?;
    if log.rows().is_empty() {
        return Err(anyhow!("{}: log has no rows", path.display()));
    }
    Ok(log)
}

fn ratio(x: f64, base: f64) -> String {
    if base == 0.0 {
        if x == 0.0 { "1.000".into() } else { "inf".into() }
    } else {
        format!("{:.3}", x / base)
    }
}

/// Summary table of `paths`, with ratios against the first log.
pub fn compare(paths: &[PathBuf], target: Option<f64>) -> Result<String> {
    let summaries = paths
        .iter()
        .map(|p| {
            let log = load(p)?;
            let last = log.last().expect("non-empty");
            Ok(Summary {
                name: p.display().to_string(),
                accuracy: last.test_accuracy,
                resource: last.cumulative_resource_s.as_secs(),
                wastage: last.cumulative_wastage_s.as_secs(),
                to_target: target
                    .and_then(|t| time_to_accuracy(&log, t))
                    .map(|(time, res)| (time, res.as_secs())),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let width = summaries.iter().map(|s| s.name.chars().count()).max().unwrap_or(3).max(3);
    let mut out = String::new();
    write!(out, "{:<width$}  {:>9}  {:>13}  {:>13}", "log", "final_acc", "resource_s", "wastage_s").unwrap();
    if target.is_some() {
        write!(out, "  {:>13}  {:>13}", "target_time_s", "target_res_s").unwrap();
    }
    write!(out, "  {:>10}  {:>9}", "resource_x", "wastage_x").unwrap();
    if target.is_some() {
        write!(out, "  {:>12}", "target_res_x").unwrap();
    }
    out.push('\n');

    let base = &summaries[0];
    for s in &summaries {
        write!(
            out,
            "{:<width$}  {:>9.4}  {:>13.3}  {:>13.3}",
            s.name, s.accuracy, s.resource, s.wastage
        )
        .unwrap();
        if target.is_some() {
            let (t, r) = match s.to_target {
                Some((t, r)) => (format!("{t:.3}"), format!("{r:.3}")),
                None => (MISSING.into(), MISSING.into()),
            };
            write!(out, "  {t:>13}  {r:>13}").unwrap();
        }
        write!(out, "  {:>10}  {:>9}", ratio(s.resource, base.resource), ratio(s.wastage, base.wastage)).unwrap();
        if target.is_some() {
            let r = match (s.to_target, base.to_target) {
                (Some((_, r)), Some((_, b))) => ratio(r, b),
                _ => MISSING.into(),
            };
            write!(out, "  {r:>12}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}
