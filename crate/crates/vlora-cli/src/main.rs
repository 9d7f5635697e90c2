//! `vlora` — train, evaluate, verify, and cost-model a language model that
//! consumes images as generated low-rank weight deltas instead of tokens.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or config error.

mod checkpoint;
mod config;
mod flops;
mod run;
mod verify;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "vlora", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytical FLOPs sweep (CSV) or the fixed reference table.
    Flops(flops::FlopsArgs),
    /// Run the numerical verification suites.
    Verify(verify::VerifyArgs),
    /// Pretrain or finetune on synthetic image-caption pairs.
    Train(run::TrainArgs),
    /// Teacher-forced perplexity of a finished training run.
    Eval(run::EvalArgs),
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("VLORA_SEED") {
        Err(_) => Ok(None),
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map(Some)
            .with_context(|| format!("VLORA_SEED is not a u64: {text:?}")),
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Flops(args) => flops::run(args),
        Cmd::Verify(args) => {
            let seed = env_seed()?;
            verify::run(args, seed)
        }
        Cmd::Train(args) => {
            let seed = env_seed()?;
            run::train(args, seed)
        }
        Cmd::Eval(args) => run::eval(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
