//! Toy decoder-only language model.
//!
//! Standard pre-norm residual blocks: multi-head causal self-attention
//! (`W_Q`, `W_K`, `W_V`, `W_O`) followed by a two-layer SiLU FFN (`W_1`,
//! `W_2`), RMS norms in front of both sublayers, learned absolute position
//! embeddings, no biases anywhere. Small enough to train on a CPU in
//! minutes, but structurally the same six weight matrices per block that
//! the delta machinery in [`crate::generator`] and [`crate::inject`]
//! targets.
//!
//! Every matrix multiply in [`LlmWeights::forward`] goes through
//! [`apply_weight`], which adds the low-rank branch `(x·down)·up` next to
//! `x·W` whenever a delta is bound to that matrix. An empty delta slice is
//! the bare LM.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::generator::{LowRankDelta, WeightKind};
use crate::rng::Rng;
use crate::tensor::{Element, Shape, Tensor};

/// Variance floor inside every RMS norm.
pub const RMS_EPS: f64 = 1e-5;

/// Matrices initialize at std `1/√fan_in` — the scale that keeps
/// activations and logits O(1) at any width — and norm gains start at one.
/// At toy widths a flat GPT-style 0.02 would be far too cold: with a
/// frozen LM (the pretraining stage trains only the generators) the head
/// could never spread its logits enough to commit to a prediction.
fn scaled_std(fan_in: usize) -> f64 {
    1.0 / num_traits::Float::sqrt(fan_in as f64)
}

/// Decoder shape parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmConfig {
    /// Number of decoder blocks.
    pub d_blocks: usize,
    /// Hidden size.
    pub h: usize,
    /// Attention head count; must divide `h`.
    pub n_heads: usize,
    /// FFN inner size (conventionally `4h`).
    pub h_ff: usize,
    /// Vocabulary size.
    pub vocab: usize,
    /// Longest supported token sequence.
    pub max_seq: usize,
}

impl LlmConfig {
    pub fn head_dim(&self) -> usize {
        self.h / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_blocks", self.d_blocks),
            ("h", self.h),
            ("n_heads", self.n_heads),
            ("h_ff", self.h_ff),
            ("vocab", self.vocab),
            ("max_seq", self.max_seq),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("llm.{name} must be >= 1")));
            }
        }
        if !self.h.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "llm.h = {} is not divisible by llm.n_heads = {}",
                self.h, self.n_heads
            )));
        }
        Ok(())
    }
}

/// The six weight matrices and two norm gains of one decoder block.
#[derive(Debug, Clone)]
pub struct DecoderBlockWeights<T: Element> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub norm1: Tensor<T>,
    pub norm2: Tensor<T>,
}

impl<T: Element> DecoderBlockWeights<T> {
    fn init(cfg: &LlmConfig, rng: &mut Rng) -> Self {
        let h = cfg.h;
        let square = || Shape::matrix(h, h);
        DecoderBlockWeights {
            wq: Tensor::randn(square(), scaled_std(h), rng),
            wk: Tensor::randn(square(), scaled_std(h), rng),
            wv: Tensor::randn(square(), scaled_std(h), rng),
            wo: Tensor::randn(square(), scaled_std(h), rng),
            w1: Tensor::randn(Shape::matrix(h, cfg.h_ff), scaled_std(h), rng),
            w2: Tensor::randn(Shape::matrix(cfg.h_ff, h), scaled_std(cfg.h_ff), rng),
            norm1: Tensor::from_vec(Shape::vector(h), vec![T::one(); h]).expect("ones are finite"),
            norm2: Tensor::from_vec(Shape::vector(h), vec![T::one(); h]).expect("ones are finite"),
        }
    }

    /// The matrix a given weight kind names within this block.
    pub fn matrix(&self, kind: WeightKind) -> &Tensor<T> {
        match kind {
            WeightKind::Query => &self.wq,
            WeightKind::Key => &self.wk,
            WeightKind::Value => &self.wv,
            WeightKind::Output => &self.wo,
            WeightKind::FfnUp => &self.w1,
            WeightKind::FfnDown => &self.w2,
        }
    }
}

/// Full parameter set of the toy LM.
#[derive(Debug, Clone)]
pub struct LlmWeights<T: Element> {
    pub cfg: LlmConfig,
    pub tok_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub blocks: Vec<DecoderBlockWeights<T>>,
    pub final_norm: Tensor<T>,
    pub lm_head: Tensor<T>,
}

/// Multi-head scaled-dot-product attention over already-projected streams.
///
/// Splits `h` into `n_heads` column groups, runs
/// `softmax(q_g · k_gᵀ / √head_dim) · v_g` per head, and concatenates. The
/// caller applies `W_O`. `causal` masks scores above the diagonal and is
/// only meaningful when query and key counts agree.
pub fn attention<T: Element>(
    xq: &Tensor<T>,
    xk: &Tensor<T>,
    xv: &Tensor<T>,
    n_heads: usize,
    causal: bool,
) -> Result<Tensor<T>> {
    let (n_q, h) = xq.dims2("attention")?;
    let (n_kv, hk) = xk.dims2("attention")?;
    let (n_v, hv) = xv.dims2("attention")?;
    if h != hk || h != hv || n_kv != n_v {
        return Err(Error::shape(
            "attention",
            format!("streams disagree: q {}, k {}, v {}", xq.shape(), xk.shape(), xv.shape()),
        ));
    }
    if n_heads == 0 || h % n_heads != 0 {
        return Err(Error::shape(
            "attention",
            format!("width {h} not divisible into {n_heads} heads"),
        ));
    }
    if causal && n_q != n_kv {
        return Err(Error::shape(
            "attention",
            format!("causal mask needs square scores, got {n_q}x{n_kv}"),
        ));
    }
    let head_dim = h / n_heads;
    // Fully qualified: inherent f64::sqrt is std-only and this crate is no_std.
    let scale = 1.0 / num_traits::Float::sqrt(head_dim as f64);
    let mut heads = Vec::with_capacity(n_heads);
    for g in 0..n_heads {
        let (lo, hi) = (g * head_dim, (g + 1) * head_dim);
        let q = xq.slice_cols(lo, hi)?;
        let k = xk.slice_cols(lo, hi)?;
        let v = xv.slice_cols(lo, hi)?;
        let probs = q.matmul_nt(&k)?.scale(scale)?.softmax_rows(causal)?;
        heads.push(probs.matmul(&v)?);
    }
    Tensor::concat_cols(&heads)
}

/// Two-layer FFN: `φ(x·W_1)·W_2` with φ = SiLU.
pub fn ffn_forward<T: Element>(x: &Tensor<T>, w1: &Tensor<T>, w2: &Tensor<T>) -> Result<Tensor<T>> {
    x.matmul(w1)?.silu()?.matmul(w2)
}

/// `x·W`, plus the low-rank branch `(x·down)·up` when a delta targets `W`.
pub fn apply_weight<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    delta: Option<&LowRankDelta<T>>,
) -> Result<Tensor<T>> {
    let base = x.matmul(w)?;
    match delta {
        None => Ok(base),
        Some(d) => base.add(&x.matmul(&d.down)?.matmul(&d.up)?),
    }
}

/// Picks the delta bound to `(block, kind)`, rejecting duplicates.
fn delta_for<T: Element>(
    deltas: &[LowRankDelta<T>],
    block: usize,
    kind: WeightKind,
) -> Result<Option<&LowRankDelta<T>>> {
    let mut found = None;
    for d in deltas.iter().filter(|d| d.block_index == block && d.target == kind) {
        if found.is_some() {
            return Err(Error::shape(
                "delta_for",
                format!("two deltas bound to block {block} kind {kind:?}"),
            ));
        }
        found = Some(d);
    }
    Ok(found)
}

impl<T: Element> LlmWeights<T> {
    /// Deterministic initialization; draw order is part of the format
    /// (same seed ⇒ bit-identical weights).
    pub fn init(cfg: &LlmConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.h;
        let tok_emb = Tensor::randn(Shape::matrix(cfg.vocab, h), scaled_std(h), rng);
        let pos_emb = Tensor::randn(Shape::matrix(cfg.max_seq, h), scaled_std(h), rng);
        let blocks = (0..cfg.d_blocks).map(|_| DecoderBlockWeights::init(cfg, rng)).collect();
        let final_norm = Tensor::from_vec(Shape::vector(h), vec![T::one(); h])?;
        let lm_head = Tensor::randn(Shape::matrix(h, cfg.vocab), scaled_std(h), rng);
        Ok(LlmWeights {
            cfg: cfg.clone(),
            tok_emb,
            pos_emb,
            blocks,
            final_norm,
            lm_head,
        })
    }

    /// One pre-norm residual block; deltas in the slice that name this
    /// block index ride along their target matrices.
    pub fn block_forward(
        &self,
        x: &Tensor<T>,
        block_index: usize,
        deltas: &[LowRankDelta<T>],
    ) -> Result<Tensor<T>> {
        let bw = &self.blocks[block_index];
        let pick = |kind| delta_for(deltas, block_index, kind);

        let normed = x.rms_norm(&bw.norm1, RMS_EPS)?;
        let q = apply_weight(&normed, &bw.wq, pick(WeightKind::Query)?)?;
        let k = apply_weight(&normed, &bw.wk, pick(WeightKind::Key)?)?;
        let v = apply_weight(&normed, &bw.wv, pick(WeightKind::Value)?)?;
        let attn = attention(&q, &k, &v, self.cfg.n_heads, true)?;
        let x = x.add(&apply_weight(&attn, &bw.wo, pick(WeightKind::Output)?)?)?;

        let normed = x.rms_norm(&bw.norm2, RMS_EPS)?;
        let up = apply_weight(&normed, &bw.w1, pick(WeightKind::FfnUp)?)?.silu()?;
        let down = apply_weight(&up, &bw.w2, pick(WeightKind::FfnDown)?)?;
        x.add(&down)
    }

    /// Causal logits for a token sequence; `deltas` empty means bare LM,
    /// non-empty is the branch-mode forward used in training.
    pub fn forward(&self, tokens: &[usize], deltas: &[LowRankDelta<T>]) -> Result<Tensor<T>> {
        if tokens.len() > self.cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max_seq: self.cfg.max_seq,
            });
        }
        let mut x = self
            .tok_emb
            .embed(tokens)?
            .add(&self.pos_emb.slice_rows(0, tokens.len())?)?;
        for i in 0..self.blocks.len() {
            x = self.block_forward(&x, i, deltas)?;
        }
        x.rms_norm(&self.final_norm, RMS_EPS)?.matmul(&self.lm_head)
    }

    /// All parameters under their checkpoint names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![
            (String::from("llm.tok_emb"), self.tok_emb.clone()),
            (String::from("llm.pos_emb"), self.pos_emb.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("llm.block{i}.wq"), b.wq.clone()));
            out.push((format!("llm.block{i}.wk"), b.wk.clone()));
            out.push((format!("llm.block{i}.wv"), b.wv.clone()));
            out.push((format!("llm.block{i}.wo"), b.wo.clone()));
            out.push((format!("llm.block{i}.w1"), b.w1.clone()));
            out.push((format!("llm.block{i}.w2"), b.w2.clone()));
            out.push((format!("llm.block{i}.norm1"), b.norm1.clone()));
            out.push((format!("llm.block{i}.norm2"), b.norm2.clone()));
        }
        out.push((String::from("llm.final_norm"), self.final_norm.clone()));
        out.push((String::from("llm.lm_head"), self.lm_head.clone()));
        out
    }

    /// Marks every parameter trainable or frozen.
    pub fn set_trainable(&self, trainable: bool) {
        for (_, p) in self.named_params() {
            p.set_requires_grad(trainable);
        }
    }
}
