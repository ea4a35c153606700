//! `proctensor`: run process-tensor learning experiments from a config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use proctensor::experiment::{run_stage, ExperimentConfig, Stage};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Verb {
    GenData,
    BuildExact,
    Train,
    Evaluate,
    Run,
    Plot,
}

impl From<Verb> for Stage {
    fn from(v: Verb) -> Self {
        match v {
            Verb::GenData => Stage::GenData,
            Verb::BuildExact => Stage::BuildExact,
            Verb::Train => Stage::Train,
            Verb::Evaluate => Stage::Evaluate,
            Verb::Run => Stage::Run,
            Verb::Plot => Stage::Plot,
        }
    }
}

/// Build, learn and evaluate process tensors over a parameter sweep.
///
/// Config keys may be overridden by `PROCTENSOR_<KEY>` environment
/// variables; `--seed` overrides both.
#[derive(Debug, Parser)]
#[command(name = "proctensor", version)]
struct Cli {
    /// Experiment config (`key = value` lines). Not needed for `plot`.
    #[arg(long, env = "PROCTENSOR_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "PROCTENSOR_OUT", default_value = "out")]
    out: PathBuf,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep points run concurrently.
    #[arg(long, env = "PROCTENSOR_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Pipeline stage.
    #[arg(long, value_enum, env = "PROCTENSOR_STAGE", default_value = "run")]
    stage: Verb,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = Stage::from(cli.stage);
    let cfg = match (&cli.config, stage) {
        (Some(path), _) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            };
            match ExperimentConfig::parse_with_env(&text, std::env::vars()) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
        }
        (None, Stage::Plot) => ExperimentConfig::default(),
        (None, _) => {
            eprintln!("error: --config is required for this stage");
            return ExitCode::from(2);
        }
    };
    let mut cfg = cfg;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match run_stage(&cfg, &cli.out, stage, cli.workers) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            for (point, msg) in &outcome.failures {
                eprintln!("point {point} failed: {msg}");
            }
            if outcome.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
