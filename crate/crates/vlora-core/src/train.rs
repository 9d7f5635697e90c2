//! Synthetic captioning task, optimizer, freeze policies, and the
//! training/eval loops.
//!
//! The task is designed so that the caption is recoverable only from the
//! image: caption = one fixed start token, then `1 + symbol` for each grid
//! cell in reading order. A model that never sees the image cannot beat
//! the symbol marginal, so any loss below that line is evidence that
//! visual information reaches the LM — and the only route provided is
//! through the generated weight deltas.
//!
//! Training always runs the branch-mode forward (gradients must reach the
//! generators); evaluation runs the merged forward, exercising the path an
//! actual deployment would use.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Inherent f64 math (sqrt, cos, powi, …) is std-only and this crate is
// no_std, so float math below goes through num_traits::Float explicitly.
use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::VLoraModel;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};
use crate::vision::{SyntheticImage, VisionConfig};

/// An image and its derived caption.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub image: SyntheticImage,
    pub caption: Vec<usize>,
}

/// Token 0 opens every caption; symbols map to tokens `1 + symbol`.
pub const CAPTION_START: usize = 0;

/// The caption is a pure function of the grid: start token, then each
/// cell's symbol shifted past the start token.
pub fn caption_for(image: &SyntheticImage) -> Vec<usize> {
    let mut caption = Vec::with_capacity(1 + image.cells().len());
    caption.push(CAPTION_START);
    caption.extend(image.cells().iter().map(|&s| 1 + s as usize));
    caption
}

/// `n` i.i.d. uniform grids with their captions.
pub fn make_dataset(cfg: &VisionConfig, n: usize, rng: &mut Rng) -> Vec<SyntheticPair> {
    (0..n)
        .map(|_| {
            let image = SyntheticImage::random(cfg.g, cfg.alphabet, rng);
            let caption = caption_for(&image);
            SyntheticPair { image, caption }
        })
        .collect()
}

/// Which parameters train in which stage. The vision encoder is frozen in
/// both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreezePolicy {
    /// Only the generators learn; the LM stays at its initialization.
    Pretrain,
    /// Generators and LM learn together.
    Finetune,
}

impl FreezePolicy {
    /// Sets `requires_grad` across the whole model accordingly.
    pub fn apply<T: Element>(self, model: &VLoraModel<T>) {
        model.llm.set_trainable(matches!(self, FreezePolicy::Finetune));
        for gen in &model.generators {
            gen.set_trainable(true);
        }
        // Vision tables never train; they are leaves created frozen, and
        // stay that way regardless of stage.
    }
}

/// AdamW with decoupled weight decay; moments kept in f64 regardless of
/// the parameter precision.
pub struct AdamW<T: Element> {
    params: Vec<Tensor<T>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<T: Element> AdamW<T> {
    pub fn new(params: Vec<Tensor<T>>) -> Self {
        let m = params.iter().map(|p| alloc::vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| alloc::vec![0.0; p.numel()]).collect();
        AdamW {
            params,
            m,
            v,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One update from the gradients currently stored on the parameters.
    pub fn step(&mut self, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Float::powi(self.beta1, self.t as i32);
        let bc2 = 1.0 - Float::powi(self.beta2, self.t as i32);
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad_or_zeros();
            p.apply_update(|buf| {
                for i in 0..buf.len() {
                    let g = grad[i].to_f64();
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    let x = buf[i].to_f64();
                    let stepped = x - lr * (m_hat / (Float::sqrt(v_hat) + self.eps) + self.weight_decay * x);
                    buf[i] = T::from_f64(stepped);
                }
            });
        }
    }
}

/// Run-scale knobs for one training invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Pairs per optimizer step; gradients are averaged.
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Seeds the shuffling of pair order (not the model init).
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "train.steps = {} and train.batch_size = {} must be >= 1",
                self.steps, self.batch_size
            )));
        }
        if !(self.batch_size <= 32) {
            return Err(Error::InvalidConfig(format!(
                "train.batch_size = {} exceeds the supported 32",
                self.batch_size
            )));
        }
        if !self.peak_lr.is_finite() || self.peak_lr < 0.0 {
            return Err(Error::InvalidConfig(format!("train.peak_lr = {} is invalid", self.peak_lr)));
        }
        Ok(())
    }

    /// Linear warm-up to `peak_lr`, then cosine decay to zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let decay_span = (self.steps - self.warmup_steps).max(1) as f64;
        let progress = (step - self.warmup_steps) as f64 / decay_span;
        self.peak_lr * 0.5 * (1.0 + Float::cos(core::f64::consts::PI * progress))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Next-token cross-entropy of a pair's caption. `blind` drops the image
/// pathway (the deltas), leaving the bare LM.
pub fn pair_loss<T: Element>(model: &VLoraModel<T>, pair: &SyntheticPair, blind: bool) -> Result<Tensor<T>> {
    let n = pair.caption.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("caption of length {n} has no next-token targets")));
    }
    let inputs = &pair.caption[..n - 1];
    let targets = &pair.caption[1..];
    let logits = if blind {
        model.forward_blind(inputs)?
    } else {
        model.forward_branch(&pair.image, inputs)?
    };
    logits.cross_entropy_rows(targets)
}

/// Gradient-averaged step over `batch`; returns the mean loss. The
/// optimizer must hold exactly the policy's trainable set.
pub fn train_step<T: Element>(
    model: &VLoraModel<T>,
    batch: &[&SyntheticPair],
    optimizer: &mut AdamW<T>,
    lr: f64,
    blind: bool,
) -> Result<f64> {
    optimizer.zero_grads();
    let mut total = 0.0;
    for pair in batch {
        let loss = pair_loss(model, pair, blind)?;
        total += loss.scalar_value()?.to_f64();
        loss.scale(1.0 / batch.len() as f64)?.backward()?;
    }
    optimizer.step(lr);
    Ok(total / batch.len() as f64)
}

/// Full training run: applies the policy, builds the optimizer over the
/// trainable set, iterates shuffled batches, and reports one record per
/// step through `on_step` (and in the returned log).
pub fn train_loop<T: Element>(
    model: &VLoraModel<T>,
    dataset: &[SyntheticPair],
    cfg: &TrainConfig,
    policy: FreezePolicy,
    blind: bool,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig(String::from("empty training dataset")));
    }
    policy.apply(model);
    let mut optimizer = AdamW::new(model.trainable_params());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = Rng::new(cfg.seed);
    let mut cursor = dataset.len(); // force an initial shuffle
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(&dataset[order[cursor]]);
            cursor += 1;
        }
        let lr = cfg.lr_at(step);
        let loss = train_step(model, &batch, &mut optimizer, lr, blind).map_err(|e| Error::TrainStep {
            step: step as u64,
            source: Box::new(e),
        })?;
        let record = StepRecord { step, lr, loss };
        on_step(&record);
        log.push(record);
    }
    Ok(log)
}

/// How an evaluation pass sees the images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Each caption with its own image, deltas merged.
    Matched,
    /// No image pathway at all; the bare LM.
    Blind,
    /// Each caption with the *next* pair's image — conditioning intact but
    /// wrong, isolating how much of the skill is image-specific.
    Shuffled,
}

/// Teacher-forced perplexity `exp(total_nll / total_targets)` over pairs.
pub fn eval_perplexity<T: Element>(
    model: &VLoraModel<T>,
    pairs: &[SyntheticPair],
    mode: EvalMode,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(String::from("empty eval dataset")));
    }
    if mode == EvalMode::Shuffled && pairs.len() < 2 {
        return Err(Error::InvalidConfig(String::from("shuffled evaluation needs at least two pairs")));
    }
    let mut total_nll = 0.0;
    let mut total_targets = 0usize;
    for (i, pair) in pairs.iter().enumerate() {
        let n = pair.caption.len();
        let inputs = &pair.caption[..n - 1];
        let targets = &pair.caption[1..];
        let logits = match mode {
            EvalMode::Blind => model.forward_blind(inputs)?,
            EvalMode::Matched => model.forward_merged(&pair.image, inputs)?,
            EvalMode::Shuffled => {
                let wrong = &pairs[(i + 1) % pairs.len()].image;
                model.forward_merged(wrong, inputs)?
            }
        };
        let mean_nll = logits.cross_entropy_rows(targets)?.scalar_value()?.to_f64();
        total_nll += mean_nll * targets.len() as f64;
        total_targets += targets.len();
    }
    Ok(Float::exp(total_nll / total_targets as f64))
}
