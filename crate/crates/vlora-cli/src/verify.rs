//! Numerical verification suites: the identities the whole design rests
//! on, run end-to-end on small models. One line per suite; any failure
//! flips the exit code to 1.

use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use nalgebra::DMatrix;
use vlora_core::gradcheck::finite_diff_check_where;
use vlora_core::generator::WeightKind;
use vlora_core::llm::LlmConfig;
use vlora_core::model::{GeneratorHyper, ModelConfig, VLoraModel};
use vlora_core::train::{caption_for, make_dataset, pair_loss, train_loop, FreezePolicy, SyntheticPair, TrainConfig};
use vlora_core::vision::{SyntheticImage, VisionConfig};
use vlora_core::{Element, Rng, Tensor};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Overrides VLORA_SEED and the built-in default.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run the floating-point suites in 64-bit and tighten tolerances
    /// (gradient check to 1e-6, merge agreement to 1e-10).
    #[arg(long = "f64")]
    pub wide: bool,
    /// Corrupt one up-map entry right after init. The zero-init identity
    /// suite must then fail — proves the harness catches what it claims to.
    #[arg(long)]
    pub inject_fault: bool,
}

type SuiteResult = Result<String, String>;

pub fn run(args: VerifyArgs, env_seed: Option<u64>) -> Result<ExitCode> {
    let seed = args.seed.or(env_seed).unwrap_or(7);
    let suites: Vec<(&str, SuiteResult)> = if args.wide {
        vec![
            ("zero-init identity", zero_init_identity::<f64>(seed, args.inject_fault)),
            ("merge/branch agreement", merge_matches_branch::<f64>(seed, 1e-10)),
            ("delta rank bound", delta_rank_bound(seed)),
            ("causal masking", causal_masking::<f64>(seed)),
            ("pipeline gradients", pipeline_gradients(seed, 1e-6)),
        ]
    } else {
        vec![
            ("zero-init identity", zero_init_identity::<f32>(seed, args.inject_fault)),
            ("merge/branch agreement", merge_matches_branch::<f32>(seed, 1e-5)),
            ("delta rank bound", delta_rank_bound(seed)),
            ("causal masking", causal_masking::<f32>(seed)),
            ("pipeline gradients", pipeline_gradients(seed, 1e-4)),
        ]
    };

    let mut failed = false;
    for (name, outcome) in &suites {
        match outcome {
            Ok(detail) => println!("ok   {name}: {detail}"),
            Err(detail) => {
                failed = true;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

/// Small shape shared by the identity, merge, and causality suites.
fn small_config() -> ModelConfig {
    ModelConfig {
        llm: LlmConfig { d_blocks: 4, h: 32, n_heads: 4, h_ff: 64, vocab: 32, max_seq: 12 },
        vision: VisionConfig { g: 3, alphabet: 16, d_v: 24 },
        gen: GeneratorHyper { h_p: 24, n_blocks: 2, k: 2, r: 4, n_heads_p: 2 },
        kinds: WeightKind::ALL.to_vec(),
    }
}

fn bits_equal<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    let (av, bv) = (a.to_vec(), b.to_vec());
    av.len() == bv.len()
        && av
            .iter()
            .zip(&bv)
            .all(|(&x, &y)| x.to_f64().to_bits() == y.to_f64().to_bits())
}

fn max_scaled_gap<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let (av, bv) = (a.to_vec(), b.to_vec());
    let mut gap = 0.0f64;
    let mut scale = 0.0f64;
    for (&x, &y) in av.iter().zip(&bv) {
        let (x, y) = (x.to_f64(), y.to_f64());
        gap = gap.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    gap / scale.max(1e-30)
}

fn zero_init_identity<T: Element>(seed: u64, inject_fault: bool) -> SuiteResult {
    let cfg = small_config();
    let model = VLoraModel::<T>::init(&cfg, seed).map_err(|e| e.to_string())?;
    if inject_fault {
        model.generators[0].w_s[0].apply_update(|buf| buf[0] = T::from_f64(0.25));
    }
    let mut rng = Rng::new(seed ^ 0x1D);
    for trial in 0..100 {
        let img = SyntheticImage::random(cfg.vision.g, cfg.vision.alphabet, &mut rng);
        let len = 2 + rng.below(cfg.llm.max_seq - 2);
        let tokens: Vec<usize> = (0..len).map(|_| rng.below(cfg.llm.vocab)).collect();
        let blind = model.forward_blind(&tokens).map_err(|e| e.to_string())?;
        let branch = model.forward_branch(&img, &tokens).map_err(|e| e.to_string())?;
        let merged = model.forward_merged(&img, &tokens).map_err(|e| e.to_string())?;
        if !bits_equal(&blind, &branch) {
            return Err(format!("branch logits differ from the bare LM on pair {trial}"));
        }
        if !bits_equal(&blind, &merged) {
            return Err(format!("merged logits differ from the bare LM on pair {trial}"));
        }
    }
    Ok("100 random (image, text) pairs, logits bitwise equal to the bare LM".into())
}

fn merge_matches_branch<T: Element>(seed: u64, tol: f64) -> SuiteResult {
    let cfg = small_config();
    let model = VLoraModel::<T>::init(&cfg, seed).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(seed ^ 0x2D);
    let dataset = make_dataset(&cfg.vision, 16, &mut rng);
    let tc = TrainConfig { steps: 50, batch_size: 4, peak_lr: 2e-3, warmup_steps: 10, seed: seed ^ 0x3D };
    train_loop(&model, &dataset, &tc, FreezePolicy::Pretrain, false, |_| {})
        .map_err(|e| e.to_string())?;

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let img = SyntheticImage::random(cfg.vision.g, cfg.vision.alphabet, &mut rng);
        let tokens = caption_for(&img);
        let branch = model.forward_branch(&img, &tokens).map_err(|e| e.to_string())?;
        let merged = model.forward_merged(&img, &tokens).map_err(|e| e.to_string())?;
        worst = worst.max(max_scaled_gap(&branch, &merged));
    }
    if worst <= tol {
        Ok(format!("50 training steps, 20 inputs, max relative logit gap {worst:.2e} ≤ {tol:.0e}"))
    } else {
        Err(format!("max relative logit gap {worst:.2e} exceeds {tol:.0e}"))
    }
}

fn delta_rank_bound(seed: u64) -> SuiteResult {
    let cfg = ModelConfig {
        llm: LlmConfig { d_blocks: 8, h: 64, n_heads: 4, h_ff: 256, vocab: 64, max_seq: 24 },
        vision: VisionConfig { g: 4, alphabet: 63, d_v: 48 },
        gen: GeneratorHyper { h_p: 32, n_blocks: 2, k: 4, r: 8, n_heads_p: 2 },
        kinds: WeightKind::ALL.to_vec(),
    };
    let r = cfg.gen.r;
    let model = VLoraModel::<f64>::init(&cfg, seed).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(seed ^ 0x4D);
    let dataset = make_dataset(&cfg.vision, 16, &mut rng);
    let tc = TrainConfig { steps: 15, batch_size: 4, peak_lr: 3e-3, warmup_steps: 3, seed: seed ^ 0x5D };
    train_loop(&model, &dataset, &tc, FreezePolicy::Pretrain, false, |_| {})
        .map_err(|e| e.to_string())?;

    let z = model.encode(&dataset[0].image).map_err(|e| e.to_string())?;
    let deltas = model.deltas(&z).map_err(|e| e.to_string())?;
    let mut worst_tail = 0.0f64;
    for delta in &deltas {
        let full = delta.down.matmul(&delta.up).map_err(|e| e.to_string())?;
        let dims = full.shape().dims().to_vec();
        let dm = DMatrix::from_row_slice(dims[0], dims[1], &full.to_vec());
        let mut sv: Vec<f64> = dm.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sv[0] == 0.0 {
            return Err(format!("{:?} delta is identically zero after training", delta.target));
        }
        for s in &sv[r..] {
            worst_tail = worst_tail.max(s / sv[0]);
        }
    }
    if worst_tail < 1e-6 {
        Ok(format!("{} deltas at h=64, max σ(r+1..)/σ(1) = {worst_tail:.1e} < 1e-6", deltas.len()))
    } else {
        Err(format!("singular value tail {worst_tail:.1e} reaches past rank {r}"))
    }
}

fn causal_masking<T: Element>(seed: u64) -> SuiteResult {
    let cfg = small_config();
    let model = VLoraModel::<T>::init(&cfg, seed).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(seed ^ 0x6D);
    for trial in 0..10 {
        let mut tokens: Vec<usize> = (0..8).map(|_| rng.below(cfg.llm.vocab)).collect();
        let edit = 1 + rng.below(7);
        let before = model.forward_blind(&tokens).map_err(|e| e.to_string())?.to_vec();
        tokens[edit] = (tokens[edit] + 1) % cfg.llm.vocab;
        let after = model.forward_blind(&tokens).map_err(|e| e.to_string())?.to_vec();
        let width = cfg.llm.vocab;
        let same = before[..edit * width]
            .iter()
            .zip(&after[..edit * width])
            .all(|(&x, &y)| x.to_f64().to_bits() == y.to_f64().to_bits());
        if !same {
            return Err(format!("editing token {edit} changed earlier logits (trial {trial})"));
        }
    }
    Ok("10 suffix edits, earlier positions bitwise unchanged".into())
}

/// Parameter families covered by the pipeline check: learnable queries,
/// the shared down-projection, up-maps, cross-attention, and LM weights,
/// drawn from both generators. The injected kinds are value and FFN-up —
/// deltas the LM consumes linearly, so every family keeps gradients the
/// finite-difference floor can resolve.
const CHECKED_FAMILIES: [&str; 16] = [
    "pwg.v.queries",
    "pwg.v.w_share",
    "pwg.v.w_s0",
    "pwg.v.w_s1",
    "pwg.v.block0.cross_k",
    "pwg.v.block0.cross_v",
    "pwg.m_up.queries",
    "pwg.m_up.w_share",
    "pwg.m_up.w_s0",
    "pwg.m_up.w_s1",
    "pwg.m_up.block0.cross_k",
    "pwg.m_up.block0.cross_v",
    "llm.tok_emb",
    "llm.block0.wv",
    "llm.block2.w1",
    "llm.final_norm",
];

fn pipeline_gradients(seed: u64, tol: f64) -> SuiteResult {
    let cfg = ModelConfig {
        llm: LlmConfig { d_blocks: 4, h: 16, n_heads: 2, h_ff: 32, vocab: 16, max_seq: 8 },
        vision: VisionConfig { g: 2, alphabet: 8, d_v: 12 },
        gen: GeneratorHyper { h_p: 16, n_blocks: 2, k: 2, r: 2, n_heads_p: 2 },
        kinds: vec![WeightKind::Value, WeightKind::FfnUp],
    };
    let model = VLoraModel::<f64>::init(&cfg, seed).map_err(|e| e.to_string())?;

    // Move off the tiny init so attention paths carry measurable signal.
    let mut rng = Rng::new(seed ^ 0x7D);
    for gen in &model.generators {
        for (name, p) in gen.named_params() {
            if name.contains("norm") {
                continue;
            }
            let std = if name.contains("w_s") { 0.1 } else { 0.3 };
            p.apply_update(|buf| buf.iter_mut().for_each(|v| *v = rng.normal(std)));
        }
    }
    for (_, p) in model.vision.named_params() {
        p.apply_update(|buf| buf.iter_mut().for_each(|v| *v = rng.normal(1.0)));
    }

    let img = SyntheticImage::random(2, 8, &mut rng);
    let pair = SyntheticPair { caption: caption_for(&img), image: img };

    let by_name: std::collections::BTreeMap<String, Tensor<f64>> =
        model.named_params().into_iter().collect();
    let params: Vec<Tensor<f64>> = CHECKED_FAMILIES
        .iter()
        .map(|name| by_name[*name].clone())
        .collect();
    for p in &params {
        p.set_requires_grad(true);
    }

    // Step and floor sized against both central-difference error terms for
    // a ~ln(16) loss: rounding ≈ ε·|f|/h ≈ 6e-11 and truncation ≈ h²·|f⁗|/6
    // ≈ 2e-11, so gradients ≥ 1e-4 are resolved to better than 1e-6.
    let mut sample_rng = Rng::new(seed ^ 0x8D);
    let check = finite_diff_check_where(&params, 1e-5, 6, 1e-4, &mut sample_rng, || {
        pair_loss(&model, &pair, false)
    })
    .map_err(|e| e.to_string())?;
    if check.coords_checked < 64 {
        return Err(format!("only {} coordinates sampled", check.coords_checked));
    }
    if check.max_rel_err < tol {
        Ok(format!(
            "{} coordinates across {} families, max relative error {:.1e} < {tol:.0e}",
            check.coords_checked,
            CHECKED_FAMILIES.len(),
            check.max_rel_err
        ))
    } else {
        Err(format!("max relative gradient error {:.1e} exceeds {tol:.0e}", check.max_rel_err))
    }
}
