//! `train` and `eval`: the synthetic-captioning harness behind files.
//!
//! A training run owns an output directory: the resolved config, the
//! initial and final checkpoints (LM, vision, and generator state in
//! separate files so freeze contracts are plain byte comparisons), and a
//! JSON-lines metrics log. `eval` reads such a directory back, so the
//! model shape can never drift between the two commands.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use vlora_core::model::VLoraModel;
use vlora_core::train::{self, EvalMode, FreezePolicy};
use vlora_core::{Rng, Tensor};

use crate::checkpoint;
use crate::config::RunConfig;

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Stage {
    /// Only the generators learn; LM and vision stay frozen.
    Pretrain,
    /// Generators and LM learn; vision stays frozen.
    Finetune,
}

impl Stage {
    fn policy(self) -> FreezePolicy {
        match self {
            Stage::Pretrain => FreezePolicy::Pretrain,
            Stage::Finetune => FreezePolicy::Finetune,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run configuration; omitted means the built-in toy defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub stage: Stage,
    /// Output directory (config, checkpoints, metrics).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides VLORA_SEED and the config-file seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides [train].steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Restrict deltas to a weight-kind set: qkvom, qkvm, qkv, qko or qk.
    #[arg(long)]
    pub ablate_kinds: Option<String>,
    /// Overrides the delta rank [generator].r.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Overrides the generator depth [generator].n_blocks.
    #[arg(long)]
    pub pwg_blocks: Option<usize>,
    /// Image-blind control: ignore the image pathway entirely.
    #[arg(long)]
    pub blind: bool,
    /// Start from the final checkpoints of a previous run directory.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// A `train --out` directory.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "matched")]
    pub mode: Mode,
    /// Overrides [train].eval_pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Mode {
    /// Each caption scored with its own image merged in.
    Matched,
    /// Bare LM, no image pathway.
    Blind,
    /// Each caption scored under the next pair's image.
    Shuffled,
}

impl Mode {
    fn eval_mode(self) -> EvalMode {
        match self {
            Mode::Matched => EvalMode::Matched,
            Mode::Blind => EvalMode::Blind,
            Mode::Shuffled => EvalMode::Shuffled,
        }
    }
    fn name(self) -> &'static str {
        match self {
            Mode::Matched => "matched",
            Mode::Blind => "blind",
            Mode::Shuffled => "shuffled",
        }
    }
}

/// Checkpoint file name plus the named parameters stored in it.
type ParamGroup = (&'static str, Vec<(String, Tensor<f32>)>);

/// The three persisted parameter groups of one model.
fn param_groups(model: &VLoraModel<f32>) -> [ParamGroup; 3] {
    let pwg = model
        .named_params()
        .into_iter()
        .filter(|(name, _)| name.starts_with("pwg."))
        .collect();
    [
        ("llm.ckpt", model.llm.named_params()),
        ("vision.ckpt", model.vision.named_params()),
        ("pwg.ckpt", pwg),
    ]
}

fn save_groups(dir: &Path, model: &VLoraModel<f32>) -> Result<()> {
    for (file, entries) in param_groups(model) {
        checkpoint::save(&dir.join(file), &entries)?;
    }
    Ok(())
}

fn restore_groups(dir: &Path, model: &VLoraModel<f32>) -> Result<()> {
    for (file, entries) in param_groups(model) {
        checkpoint::restore(&dir.join(file), &entries)?;
    }
    Ok(())
}

pub fn train(args: TrainArgs, env_seed: Option<u64>) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    if let Some(kinds) = &args.ablate_kinds {
        cfg.injection.kinds = kinds.clone();
    }
    if let Some(rank) = args.rank {
        cfg.generator.r = rank;
    }
    if let Some(depth) = args.pwg_blocks {
        cfg.generator.n_blocks = depth;
    }
    if let Some(seed) = args.seed.or(env_seed) {
        cfg.train.seed = seed;
    }
    let model_cfg = cfg.model_config()?; // revalidate after overrides
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;

    let model = VLoraModel::<f32>::init(&model_cfg, cfg.train.seed)?;
    if let Some(from) = &args.init_from {
        restore_groups(&from.join("final"), &model)
            .with_context(|| format!("loading initial state from {}", from.display()))?;
    }

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), toml::to_string_pretty(&cfg)?)?;
    save_groups(&args.out.join("init"), &model)?;

    let mut data_rng = Rng::new(cfg.train_data_seed());
    let dataset = train::make_dataset(&model_cfg.vision, cfg.train.dataset_pairs, &mut data_rng);

    let metrics_path = args.out.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(
        std::fs::File::create(&metrics_path)
            .with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    let mut write_err = None;
    let records = train::train_loop(
        &model,
        &dataset,
        &train_cfg,
        args.stage.policy(),
        args.blind,
        |rec| {
            let line = serde_json::json!({ "step": rec.step, "lr": rec.lr, "loss": rec.loss });
            if let Err(e) = writeln!(metrics, "{line}") {
                write_err.get_or_insert(e);
            }
        },
    )?;
    metrics.flush()?;
    if let Some(e) = write_err {
        return Err(e).context("writing metrics");
    }

    save_groups(&args.out.join("final"), &model)?;

    let tail = records.len().min(100);
    let final_mean = records[records.len() - tail..]
        .iter()
        .map(|r| r.loss)
        .sum::<f64>()
        / tail as f64;
    println!(
        "{}",
        serde_json::json!({
            "steps": records.len(),
            "initial_loss": records[0].loss,
            "final_mean_loss": final_mean,
            "out": args.out.display().to_string(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let cfg = RunConfig::load(Some(&args.run.join("config.toml")))?;
    let model_cfg = cfg.model_config()?;
    let model = VLoraModel::<f32>::init(&model_cfg, cfg.train.seed)?;
    restore_groups(&args.run.join("final"), &model)
        .with_context(|| format!("loading {}", args.run.display()))?;

    let n = args.pairs.unwrap_or(cfg.train.eval_pairs);
    let mut rng = Rng::new(cfg.eval_data_seed());
    let pairs = train::make_dataset(&model_cfg.vision, n, &mut rng);
    let ppl = train::eval_perplexity(&model, &pairs, args.mode.eval_mode())?;
    println!(
        "{}",
        serde_json::json!({ "mode": args.mode.name(), "pairs": n, "perplexity": ppl })
    );
    Ok(ExitCode::SUCCESS)
}
