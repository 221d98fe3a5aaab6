//! Experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use nonsmooth_belief::config::{default_config, validate_config, validate_config_value, EXPERIMENTS};
use nonsmooth_belief::experiments::{run_experiment, write_outputs};
use nonsmooth_belief::systems::BUILTIN_MODELS;
use nonsmooth_belief::{Error, Result};

const SEED_ENV: &str = "NONSMOOTH_BELIEF_SEED";

#[derive(Parser)]
#[command(name = "nonsmooth-belief", version, about = "Gaussian belief propagation through switched dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write trace.csv and summary.json.
    Run {
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory [default: out/<name>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; falls back to the config, then to NONSMOOTH_BELIEF_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Check a config file and print it with all defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List experiments and built-in models.
    List,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(vec![format!("{SEED_ENV}=`{s}` is not an unsigned integer")])),
        Err(_) => Ok(None),
    }
}

fn run(
    name: &str,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    samples: Option<usize>,
    steps: Option<usize>,
) -> Result<()> {
    let mut cfg = match &config {
        Some(path) => {
            let cfg = validate_config(path)?;
            if cfg.experiment != name {
                return Err(Error::Config(vec![format!(
                    "config is for experiment `{}`, not `{name}`",
                    cfg.experiment
                )]));
            }
            cfg
        }
        None => default_config(name)?,
    };
    if samples.is_some() || steps.is_some() {
        cfg.samples = samples.unwrap_or(cfg.samples);
        cfg.steps = steps.unwrap_or(cfg.steps);
        // Flag overrides go through the same checks as file values.
        cfg = validate_config_value(&serde_json::to_value(&cfg)?)?;
    }
    let seed = match seed.or(cfg.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let dir = out.unwrap_or_else(|| PathBuf::from("out").join(name));

    let start = Instant::now();
    let output = run_experiment(&cfg, seed)?;
    write_outputs(&dir, &cfg, seed, &output, start.elapsed())?;

    let converged: Vec<bool> = ["converged", "/normalization/converged", "/baseline/converged"]
        .iter()
        .filter_map(|p| {
            let v = if p.starts_with('/') {
                output.results.pointer(p)
            } else {
                output.results.get(*p)
            };
            v.and_then(|v| v.as_bool())
        })
        .collect();
    if converged.contains(&false) {
        eprintln!("warning: optimizer did not converge; see converged=false in summary.json");
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            name,
            config,
            out,
            seed,
            samples,
            steps,
        } => run(&name, config, out, seed, samples, steps),
        Command::Validate { config } => validate_config(&config).and_then(|cfg| {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }),
        Command::List => {
            println!("experiments:");
            for e in EXPERIMENTS {
                println!("  {e}");
            }
            println!("models:");
            for m in BUILTIN_MODELS {
                println!("  {m}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
