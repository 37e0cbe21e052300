use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ivaegan::config::ExperimentConfig;
use ivaegan::runner::{Command, Runner, SweepKind};
use ivaegan::{Error, Result};

/// Feature-generating zero-shot learning experiments.
#[derive(Parser, Debug)]
#[command(name = "ivaegan", version)]
struct Cli {
    /// Flat `key = value` config file; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate or import the dataset container.
    SynthData,
    /// Stage 1: unsupervised VAE pretraining.
    Pretrain,
    /// Stage 2: semantic regressor.
    TrainRegressor,
    /// Stage 3: conditional generator and critics.
    TrainGenerator,
    /// Train the final classifier on synthesized features and report metrics.
    Evaluate,
    /// Oracle APE of the trained generator (synthetic source only).
    Ape,
    /// Stage 3 over every (generator prior, critic prior) pair.
    Chain,
    /// Prior or lambda_u2 sensitivity sweep.
    Sweep {
        #[arg(long, value_enum, default_value_t = Kind::Prior)]
        kind: Kind,
        /// Comma-separated priors or lambda_u2 values, overriding the config.
        #[arg(long)]
        values: Option<String>,
    },
    /// synth-data, pretrain, train-regressor, train-generator, evaluate.
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Prior,
    LambdaU2,
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, Command)> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    let cmd = match &cli.cmd {
        Cmd::SynthData => Command::SynthData,
        Cmd::Pretrain => Command::Pretrain,
        Cmd::TrainRegressor => Command::TrainRegressor,
        Cmd::TrainGenerator => Command::TrainGenerator,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Ape => Command::Ape,
        Cmd::Chain => Command::Chain,
        Cmd::All => Command::All,
        Cmd::Sweep { kind, values } => {
            let (key, kind) = match kind {
                Kind::Prior => ("sweep.priors", SweepKind::Prior),
                Kind::LambdaU2 => ("sweep.lambda_u2", SweepKind::LambdaU2),
            };
            if let Some(v) = values {
                cfg.set(key, v)?;
            }
            Command::Sweep(kind)
        }
    };
    cfg.validate()?;
    Ok((cfg, cmd))
}

fn run(cli: &Cli) -> Result<()> {
    let (cfg, cmd) = load(cli)?;
    let mut runner = Runner::new(cfg)?;
    for p in runner.run(cmd)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
