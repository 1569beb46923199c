use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flashsim::config::{Config, ConfigError};
use flashsim::experiments::{run_single, run_sweep, ExperimentError, SweepPlan};

/// Deterministic SSD IO-stack simulator.
#[derive(Parser, Debug)]
#[command(name = "flashsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation and write trace.csv, metrics.csv and config_resolved.
    Run {
        /// Config file, or the name of a shipped preset.
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "FLASHSIM_OUT")]
        out: PathBuf,
    },
    /// Vary one dotted config key across values and seeds.
    Sweep {
        #[arg(long)]
        config: String,
        /// Dotted key such as controller.greediness_K; defaults to experiment.param.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values; defaults to experiment.values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        /// Number of seeds per value, counting up from --seed.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "FLASHSIM_OUT")]
        out: PathBuf,
    },
    /// Check a config against the schema without running it.
    Validate {
        #[arg(long)]
        config: String,
    },
}

enum Failure {
    Config(String),
    Simulation(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Sim(e) => Failure::Simulation(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn experiment_name(config: &Config, spec: &str) -> String {
    config.get("experiment.name").map(str::to_string).unwrap_or_else(|| {
        Path::new(spec).file_stem().map_or("experiment".into(), |s| s.to_string_lossy().into_owned())
    })
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { config } => {
            Config::load_or_preset(&config)?.resolve()?;
            println!("{config}: ok");
        }
        Command::Run { config, seed, out } => {
            let resolved = Config::load_or_preset(&config)?.resolve()?;
            let metrics = run_single(&resolved, seed, &out)?;
            println!("{}: {} measured threads, results in {}", config, metrics.threads.len(), out.display());
        }
        Command::Sweep { config: spec, param, values, seeds, seed, out } => {
            let config = Config::load_or_preset(&spec)?;
            let experiment = config.resolve()?.experiment;
            let param = param
                .or(experiment.param)
                .ok_or_else(|| Failure::Config("--param: no parameter given and experiment.param is unset".into()))?;
            let values = values.unwrap_or(experiment.values);
            let count = seeds.or(experiment.seeds).unwrap_or(1);
            if count == 0 {
                return Err(Failure::Config("--seeds: must be at least 1".into()));
            }
            let plan = SweepPlan {
                name: experiment_name(&config, &spec),
                param,
                values,
                seeds: (seed..seed + count).collect(),
            };
            let cells = run_sweep(&config, &plan, &out)?;
            let failed = cells.iter().filter(|c| c.failed()).count();
            println!("{} cells, {failed} failed, results in {}", cells.len(), out.join(&plan.name).display());
            if failed > 0 {
                return Err(Failure::Simulation(format!("{failed} sweep cells failed; see sweep.csv")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Simulation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
