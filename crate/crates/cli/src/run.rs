use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use fedsim_core::engine::{run_experiment, WorkSummary};
use fedsim_core::metrics::{export, ExportFormat};
use fedsim_core::ExperimentConfig;
use rayon::prelude::*;
use serde::Serialize;
use toml::Value;

use crate::config::{config_hash, experiment_name, parse_override, ExperimentFile, Resolved};
use crate::Failure;

pub struct RunArgs {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub out: PathBuf,
    pub seeds: Option<u64>,
}

#[derive(Serialize)]
struct SeedEntry {
    seed: u64,
    csv: String,
    json: String,
    rounds: usize,
    final_accuracy: f64,
    final_train_loss: f64,
    sim_time_s: f64,
    resource_s: f64,
    wastage_s: f64,
    work: WorkSummary,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_path: String,
    config_hash: String,
    overrides: &'a [String],
    matrix_point: Vec<String>,
    config: &'a ExperimentConfig,
    runs: Vec<SeedEntry>,
    fedsim_version: &'static str,
    /// Wall-clock seconds; the only field that varies between identical invocations.
    wall_time_s: f64,
}

fn collect_overrides(raw: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    if let Ok(seed) = std::env::var("FEDSIM_SEED") {
        let seed: i64 = seed
            .trim()
            .parse()
            .with_context(|| format!("FEDSIM_SEED={seed:?} is not an integer"))?;
        out.push(("seed".to_string(), Value::Integer(seed)));
    }
    for r in raw {
        out.push(parse_override(r)?);
    }
    Ok(out)
}

pub fn run(args: &RunArgs) -> Result<(), Failure> {
    let file = ExperimentFile::load(&args.config).map_err(Failure::Usage)?;
    let overrides = collect_overrides(&args.overrides).map_err(Failure::Usage)?;
    let points = file.resolve(&overrides).map_err(Failure::Usage)?;
    for point in &points {
        run_point(args, point).map_err(Failure::Runtime)?;
    }
    Ok(())
}

fn run_point(args: &RunArgs, resolved: &Resolved) -> Result<()> {
    let started = Instant::now();
    let config = &resolved.config;
    let name = experiment_name(config, &resolved.point);
    let dir = args.out.join(&name);
    let n_seeds = args.seeds.unwrap_or(config.seeds).max(1);
    let seeds: Vec<u64> = (0..n_seeds).map(|i| config.seed + i).collect();

    let runs = seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed, &name, &dir))
        .collect::<Result<Vec<_>>>()?;
    for r in &runs {
        println!(
            "{name} seed {}: accuracy {:.4}, resource {:.1} s, wastage {:.1} s -> {}",
            r.seed,
            r.final_accuracy,
            r.resource_s,
            r.wastage_s,
            dir.join(&r.csv).display()
        );
    }
    let manifest = Manifest {
        experiment: &name,
        config_path: args.config.display().to_string(),
        config_hash: config_hash(config),
        overrides: &args.overrides,
        matrix_point: resolved.point.iter().map(|(k, v)| format!("{k}={v}")).collect(),
        config,
        runs,
        fedsim_version: env!("CARGO_PKG_VERSION"),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let path = dir.join("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest)?;
    body.push('\n');
    fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn run_seed(config: &ExperimentConfig, seed: u64, name: &str, dir: &Path) -> Result<SeedEntry> {
    let config = ExperimentConfig {
        seed,
        ..config.clone()
    };
    let dataset = config.build_dataset()?;
    let out = run_experiment(&config, &dataset).with_context(|| format!("{name} seed {seed}"))?;
    let seed_dir = dir.join(seed.to_string());
    fs::create_dir_all(&seed_dir).with_context(|| format!("cannot create {}", seed_dir.display()))?;
    let csv = format!("{seed}/{name}.{seed}.csv");
    let json = format!("{seed}/{name}.{seed}.json");
    export(&out.log, dir.join(&csv), ExportFormat::Csv)?;
    export(&out.log, dir.join(&json), ExportFormat::Json)?;
    let last = out.log.last().expect("log has the initial row");
    Ok(SeedEntry {
        seed,
        csv,
        json,
        rounds: config.rounds,
        final_accuracy: last.test_accuracy,
        final_train_loss: last.train_loss,
        sim_time_s: last.sim_time_s,
        resource_s: last.cumulative_resource_s.as_secs(),
        wastage_s: last.cumulative_wastage_s.as_secs(),
        work: out.work,
    })
}
