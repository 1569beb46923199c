//! Single runs and one-parameter sweeps, with their on-disk artifacts:
//!
//! ```text
//! <out>/<name>/<param>=<value>/seed=<s>/{trace.csv, metrics.csv, config_resolved}
//! <out>/<name>/sweep.csv
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Config, ConfigError, Resolved};
use crate::metrics::{compute, DeviceModel, Metrics};
use crate::sim::{RunOutput, SimError, Simulation};
use crate::trace::write_trace;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.display().to_string(), source }
}

pub fn device_model(resolved: &Resolved) -> DeviceModel {
    let sim = &resolved.sim;
    let mut timing = sim.timing;
    timing.copyback |= sim.gc.copyback;
    DeviceModel { geometry: sim.geometry, timing, interleaving: sim.interleaving }
}

/// Runs one simulation in memory.
pub fn simulate(resolved: &Resolved, seed: u64) -> Result<(RunOutput, Metrics), SimError> {
    let output = Simulation::new(resolved.sim.clone(), resolved.threads(), seed)?.run()?;
    let metrics = compute(&output.trace, &output.thread_names, &device_model(resolved));
    Ok((output, metrics))
}

pub fn config_echo(resolved: &Resolved, seed: u64) -> String {
    format!("# seed = {seed}\n{}", resolved.echo())
}

/// Writes `trace.csv`, `metrics.csv` and `config_resolved` into `dir`.
pub fn write_run(
    dir: &Path,
    resolved: &Resolved,
    seed: u64,
    output: &RunOutput,
    metrics: &Metrics,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trace_path = dir.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, &output.trace, &output.thread_names).map_err(io_err(&trace_path))?;
    std::io::Write::flush(&mut w).map_err(io_err(&trace_path))?;
    let metrics_path = dir.join("metrics.csv");
    fs::write(&metrics_path, metrics.to_csv()).map_err(io_err(&metrics_path))?;
    let echo_path = dir.join("config_resolved");
    fs::write(&echo_path, config_echo(resolved, seed)).map_err(io_err(&echo_path))?;
    Ok(())
}

/// Runs one configuration and writes its artifacts into `dir`.
pub fn run_single(resolved: &Resolved, seed: u64, dir: &Path) -> Result<Metrics, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (output, metrics) = simulate(resolved, seed)?;
    write_run(dir, resolved, seed, &output, &metrics)?;
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepPlan {
    pub name: String,
    pub param: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub value: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: Result<Metrics, String>,
}

impl SweepCell {
    pub fn failed(&self) -> bool {
        self.outcome.is_err()
    }
}

/// Applies every value up front so configuration errors surface before any run.
fn cell_configs(base: &Config, plan: &SweepPlan) -> Result<Vec<Resolved>, ConfigError> {
    if plan.values.is_empty() {
        return Err(ConfigError::Invalid { key: plan.param.clone(), reason: "no values to sweep".into() });
    }
    plan.values
        .iter()
        .map(|value| {
            if value.contains('/') || value.contains(',') {
                return Err(ConfigError::Invalid {
                    key: plan.param.clone(),
                    reason: format!("value {value:?} cannot name an output directory"),
                });
            }
            let mut config = base.clone();
            config.set(&plan.param, value)?;
            config.resolve()
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

/// Runs every (value, seed) cell in isolation and writes `sweep.csv`.
pub fn run_sweep(base: &Config, plan: &SweepPlan, out: &Path) -> Result<Vec<SweepCell>, ExperimentError> {
    let configs = cell_configs(base, plan)?;
    let root = out.join(&plan.name);
    fs::create_dir_all(&root).map_err(io_err(&root))?;
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|i| plan.seeds.iter().map(move |&s| (i, s))).collect();
    let cells: Vec<Result<SweepCell, ExperimentError>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let value = plan.values[i].clone();
            let dir = root.join(format!("{}={value}", plan.param)).join(format!("seed={seed}"));
            let outcome = match simulate(&configs[i], seed) {
                Ok((output, metrics)) => {
                    write_run(&dir, &configs[i], seed, &output, &metrics)?;
                    Ok(metrics)
                }
                Err(e) => {
                    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                    let echo_path = dir.join("config_resolved");
                    fs::write(&echo_path, config_echo(&configs[i], seed)).map_err(io_err(&echo_path))?;
                    log::error!("{}={value} seed={seed}: {e}", plan.param);
                    Err(e.to_string())
                }
            };
            Ok(SweepCell { value, seed, dir, outcome })
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>, _>>()?;
    let path = root.join("sweep.csv");
    fs::write(&path, sweep_csv(plan, &cells)).map_err(io_err(&path))?;
    Ok(cells)
}

const DEVICE_COLUMNS: [&str; 5] =
    ["write_amplification", "gc_migrations", "wl_migrations", "app_writes", "data_programs"];
const THREAD_COLUMNS: [&str; 4] = ["throughput_iops", "latency_mean_ns", "latency_p50_ns", "latency_p99_ns"];

/// One row per cell in (value, seed) order; per-thread columns use the threads' aggregate stats.
pub fn sweep_csv(plan: &SweepPlan, cells: &[SweepCell]) -> String {
    let mut threads: Vec<String> = Vec::new();
    for cell in cells {
        if let Ok(m) = &cell.outcome {
            for t in &m.threads {
                if !threads.contains(&t.name) {
                    threads.push(t.name.clone());
                }
            }
        }
    }
    let mut header = vec!["param".to_string(), "value".into(), "seed".into(), "status".into()];
    header.extend(DEVICE_COLUMNS.iter().map(|c| c.to_string()));
    for t in &threads {
        header.extend(THREAD_COLUMNS.iter().map(|c| format!("{t}.{c}")));
    }
    header.push("error".into());
    let mut out = header.join(",");
    out.push('\n');
    for cell in cells {
        let mut row = vec![plan.param.clone(), cell.value.clone(), cell.seed.to_string()];
        match &cell.outcome {
            Ok(m) => {
                let d = &m.device;
                row.push("OK".into());
                row.push(d.write_amplification.map_or(String::new(), |v| format!("{v:.6}")));
                row.push(d.gc_migrations.to_string());
                row.push(d.wl_migrations.to_string());
                row.push(d.app_writes.to_string());
                row.push(d.data_programs.to_string());
                for name in &threads {
                    match m.thread(name) {
                        Some(t) => {
                            let lat = t.all.latency.as_ref();
                            row.push(format!("{:.6}", t.all.throughput_iops));
                            row.push(lat.map_or(String::new(), |l| l.mean_ns.to_string()));
                            row.push(lat.map_or(String::new(), |l| l.p50_ns.to_string()));
                            row.push(lat.map_or(String::new(), |l| l.p99_ns.to_string()));
                        }
                        None => row.extend(std::iter::repeat_n(String::new(), THREAD_COLUMNS.len())),
                    }
                }
                row.push(String::new());
            }
            Err(e) => {
                row.push("FAILED".into());
                row.extend(std::iter::repeat_n(
                    String::new(),
                    DEVICE_COLUMNS.len() + THREAD_COLUMNS.len() * threads.len(),
                ));
                row.push(csv_field(e));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
