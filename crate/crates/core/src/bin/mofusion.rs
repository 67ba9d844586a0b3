use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mofusion::harness::{
    cmd_dump, cmd_evaluate, cmd_filter, cmd_fuse, cmd_generate, cmd_train, DumpOptions, DumpSource, EvaluateOptions,
    ExperimentConfig, GenerateOptions, Method, SimulateOptions, Split, TrainOptions,
};
use mofusion::{Error, Result};

#[derive(Parser)]
#[command(name = "mofusion", version, about = "Multi-sensor density fusion workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, filter and vectorise runs into a dataset file.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        /// Number of groups; defaults to the protocol size of the split.
        #[arg(long)]
        groups: Option<usize>,
        /// Continue an interrupted file.
        #[arg(long)]
        resume: bool,
    },
    /// Run the local filters and write their estimates.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Train the fusion network on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1000)]
        checkpoint_every: usize,
    },
    /// Fuse local densities and write the fused components.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Monte Carlo evaluation with GOSPA and NLL.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Plot data and attention weights for a single run.
    Dump {
        #[command(flatten)]
        common: Common,
        /// Test-stream run index, or record index with --dataset.
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    if common.seed > i64::MAX as u64 {
        return Err(Error::InvalidArgument("seed must not exceed 2^63 - 1".into()));
    }
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            common,
            split,
            groups,
            resume,
        } => {
            let cfg = load(&common)?;
            let n = cmd_generate(
                &cfg,
                &GenerateOptions {
                    seed: common.seed,
                    split,
                    groups,
                    out: common.out.clone(),
                    resume,
                    force: common.force,
                },
            )?;
            eprintln!("{n} records in {}", common.out.display());
        }
        Command::Filter { common, runs } => {
            let cfg = load(&common)?;
            cmd_filter(
                &cfg,
                &SimulateOptions {
                    seed: common.seed,
                    runs,
                    method: Method::Bayesian,
                    checkpoint: None,
                    out: common.out,
                    force: common.force,
                },
            )?;
        }
        Command::Train {
            common,
            dataset,
            validation,
            resume,
            checkpoint_every,
        } => {
            let mut cfg = load(&common)?;
            cfg.training.seed = common.seed;
            let report = cmd_train(
                &cfg,
                &TrainOptions {
                    dataset,
                    validation,
                    out: common.out,
                    resume,
                    force: common.force,
                    checkpoint_every,
                },
                |msg| eprintln!("{msg}"),
            )?;
            if let Some(p) = report.curve.last() {
                eprintln!("finished at step {} with batch loss {}", p.step, p.loss);
            }
        }
        Command::Fuse {
            common,
            runs,
            method,
            checkpoint,
        } => {
            let cfg = load(&common)?;
            cmd_fuse(
                &cfg,
                &SimulateOptions {
                    seed: common.seed,
                    runs,
                    method,
                    checkpoint,
                    out: common.out,
                    force: common.force,
                },
            )?;
        }
        Command::Evaluate {
            common,
            runs,
            method,
            checkpoint,
        } => {
            let cfg = load(&common)?;
            let summaries = cmd_evaluate(
                &cfg,
                &EvaluateOptions {
                    seed: common.seed,
                    runs,
                    method,
                    checkpoint,
                    out: common.out,
                    force: common.force,
                },
            )?;
            for s in summaries {
                println!(
                    "{:<12} GOSPA {:.4} (loc {:.4} miss {:.4} false {:.4})  NLL {:.4} (loc {:.4} miss {:.4} false {:.4})",
                    s.method,
                    s.gospa.total,
                    s.gospa.localization,
                    s.gospa.missed,
                    s.gospa.false_detection,
                    s.nll.total,
                    s.nll.localization,
                    s.nll.missed,
                    s.nll.false_detection
                );
            }
        }
        Command::Dump {
            common,
            run,
            dataset,
            method,
            checkpoint,
        } => {
            let cfg = load(&common)?;
            let source = match dataset {
                Some(path) => DumpSource::Dataset { path, index: run },
                None => DumpSource::Simulated {
                    seed: common.seed,
                    index: run,
                },
            };
            cmd_dump(
                &cfg,
                &DumpOptions {
                    source,
                    method,
                    checkpoint,
                    out: common.out,
                    force: common.force,
                },
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
