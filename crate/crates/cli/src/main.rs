use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trunk_cli::commands::{self, Role, TargetSource, TrainPaths};
use trunk_cli::config::ExperimentConfig;
use trunk_cli::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "trunk", version, about = "Spiking forward models and motor inference for trunk-like robot arms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample random gear states and simulate their poses.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_enum, default_value = "train")]
        role: Role,
    },
    /// Train a forward model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Test set evaluated after every epoch.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSV (default: next to the checkpoint).
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Infer gear states that reach target poses.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of random reachable targets, or a CSV file of poses.
        #[arg(long)]
        targets: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        no_correction: bool,
    },
    /// Run every optimizer over the same targets and summarize convergence.
    CompareOptimizers {
        #[command(flatten)]
        common: Common,
        /// Trained model. Repeatable.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Runs per optimizer, split across the models.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-joint prediction errors of a model on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(cli: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            ExperimentConfig::from_text(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let mut pairs = Vec::new();
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{o}'")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    cfg.apply_all(&pairs)?;
    Ok(cfg)
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common, .. }
            | Command::Train { common, .. }
            | Command::Infer { common, .. }
            | Command::CompareOptimizers { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Config { common } => common,
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let common = cli.command.common();
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut cfg = load_config(common)?;
    let force = common.force;
    match &cli.command {
        Command::Generate { out, samples, role, .. } => commands::generate(&cfg, out, *samples, *role, force).map(|_| ()),
        Command::Train {
            data,
            test,
            out,
            metrics,
            resume,
            ..
        } => {
            let paths = TrainPaths {
                data,
                test: test.as_deref(),
                out,
                metrics: metrics.as_deref(),
                resume: resume.as_deref(),
            };
            commands::train(&cfg, paths, force).map(|_| ())
        }
        Command::Infer {
            checkpoint,
            targets,
            out_dir,
            no_correction,
            ..
        } => {
            if *no_correction {
                cfg.infer.correction = false;
            }
            let source = targets
                .as_deref()
                .map(TargetSource::parse)
                .unwrap_or(TargetSource::Count(cfg.targets));
            commands::infer(&cfg, checkpoint, &source, out_dir, force).map(|_| ())
        }
        Command::CompareOptimizers {
            checkpoints,
            runs,
            out_dir,
            ..
        } => commands::compare_optimizers(&cfg, checkpoints, runs.unwrap_or(cfg.compare_runs), out_dir, force).map(|_| ()),
        Command::Evaluate { checkpoint, data, out, .. } => commands::evaluate(checkpoint, data, out.as_deref(), force),
        Command::Config { .. } => {
            print!("{cfg}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
