//! Perceptual weights generators: from visual features to low-rank deltas.
//!
//! A generator owns `k` learnable query vectors. Each forward pass sends
//! them through `N` pre-norm blocks — self-attention among the queries,
//! cross-attention onto the image's feature rows `z`, then an FFN — giving
//! `k` visual parameter vectors `p_v`. A shared linear map turns each
//! `p_v,i` into a down-factor `W_v,i ∈ R^{h_in×r}`, and a per-query
//! learnable up-map `W_s[i] ∈ R^{r×h_out}` completes the delta
//! `ΔW_i = W_v,i · W_s[i]`, bound to one LM block.
//!
//! The up-maps start at exactly zero, so a fresh model is functionally the
//! bare LM: every delta is the zero matrix regardless of the image. They
//! are not a dead init — the down-factors are nonzero, so the up-maps
//! receive gradient on the first step.
//!
//! One generator serves one target weight kind; a model that touches
//! several kinds carries several generators.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::inject::InjectionPlan;
use crate::llm::{attention, RMS_EPS};
use crate::rng::Rng;
use crate::tensor::{Element, Shape, Tensor};
use crate::vision::VisualFeatures;

/// Initialization scale of every generator matrix; the up-maps are the
/// one exception and start at exactly zero.
pub const INIT_STD: f64 = 0.02;

/// Which LM matrix a delta applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WeightKind {
    Query,
    Key,
    Value,
    Output,
    FfnUp,
    FfnDown,
}

impl WeightKind {
    pub const ALL: [WeightKind; 6] = [
        WeightKind::Query,
        WeightKind::Key,
        WeightKind::Value,
        WeightKind::Output,
        WeightKind::FfnUp,
        WeightKind::FfnDown,
    ];

    /// Target matrix shape `(h_in, h_out)` given the LM's `h` and `h_ff`.
    pub fn shape(self, h: usize, h_ff: usize) -> (usize, usize) {
        match self {
            WeightKind::Query | WeightKind::Key | WeightKind::Value | WeightKind::Output => (h, h),
            WeightKind::FfnUp => (h, h_ff),
            WeightKind::FfnDown => (h_ff, h),
        }
    }

    /// Checkpoint name component.
    pub fn label(self) -> &'static str {
        match self {
            WeightKind::Query => "q",
            WeightKind::Key => "k",
            WeightKind::Value => "v",
            WeightKind::Output => "o",
            WeightKind::FfnUp => "m_up",
            WeightKind::FfnDown => "m_down",
        }
    }

    /// Letter in the five-slot ablation taxonomy; both FFN kinds share `m`.
    pub fn ablation_letter(self) -> char {
        match self {
            WeightKind::Query => 'q',
            WeightKind::Key => 'k',
            WeightKind::Value => 'v',
            WeightKind::Output => 'o',
            WeightKind::FfnUp | WeightKind::FfnDown => 'm',
        }
    }
}

/// Generator shape parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Generator hidden size.
    pub h_p: usize,
    /// Number of generator blocks (N).
    pub n_blocks: usize,
    /// Perceptual query count; also the number of deltas produced.
    pub k: usize,
    /// Delta rank.
    pub r: usize,
    /// Generator attention head count; must divide `h_p`.
    pub n_heads_p: usize,
    /// Width of the visual feature rows this generator cross-attends to.
    pub d_v: usize,
    /// The LM weight kind this generator serves.
    pub target: WeightKind,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h_p", self.h_p),
            ("n_blocks", self.n_blocks),
            ("k", self.k),
            ("r", self.r),
            ("n_heads_p", self.n_heads_p),
            ("d_v", self.d_v),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("generator.{name} must be >= 1")));
            }
        }
        if !self.h_p.is_multiple_of(self.n_heads_p) {
            return Err(Error::InvalidConfig(format!(
                "generator.h_p = {} is not divisible by n_heads_p = {}",
                self.h_p, self.n_heads_p
            )));
        }
        Ok(())
    }
}

/// One generator block: self-attention, cross-attention over `z`, FFN.
#[derive(Debug, Clone)]
pub struct GeneratorBlockWeights<T: Element> {
    pub self_q: Tensor<T>,
    pub self_k: Tensor<T>,
    pub self_v: Tensor<T>,
    pub self_o: Tensor<T>,
    pub cross_q: Tensor<T>,
    /// Projects `z` rows from `d_v` to `h_p` for keys.
    pub cross_k: Tensor<T>,
    /// Projects `z` rows from `d_v` to `h_p` for values.
    pub cross_v: Tensor<T>,
    pub cross_o: Tensor<T>,
    pub ffn_up: Tensor<T>,
    pub ffn_down: Tensor<T>,
    pub norm_self: Tensor<T>,
    pub norm_cross: Tensor<T>,
    /// Pre-norm gain for the feature rows entering the key/value
    /// projections. The encoder is frozen, so whatever scale its features
    /// arrive at, the generator normalizes them rather than having to
    /// learn an amplifier.
    pub norm_z: Tensor<T>,
    pub norm_ffn: Tensor<T>,
}

impl<T: Element> GeneratorBlockWeights<T> {
    fn init(cfg: &GeneratorConfig, rng: &mut Rng) -> Self {
        let (h_p, d_v) = (cfg.h_p, cfg.d_v);
        let std = INIT_STD;
        let ones = |n: usize| Tensor::from_vec(Shape::vector(n), vec![T::one(); n]).expect("ones are finite");
        GeneratorBlockWeights {
            self_q: Tensor::randn(Shape::matrix(h_p, h_p), std, rng),
            self_k: Tensor::randn(Shape::matrix(h_p, h_p), std, rng),
            self_v: Tensor::randn(Shape::matrix(h_p, h_p), std, rng),
            self_o: Tensor::randn(Shape::matrix(h_p, h_p), std, rng),
            cross_q: Tensor::randn(Shape::matrix(h_p, h_p), std, rng),
            cross_k: Tensor::randn(Shape::matrix(d_v, h_p), std, rng),
            cross_v: Tensor::randn(Shape::matrix(d_v, h_p), std, rng),
            cross_o: Tensor::randn(Shape::matrix(h_p, h_p), std, rng),
            ffn_up: Tensor::randn(Shape::matrix(h_p, 4 * h_p), std, rng),
            ffn_down: Tensor::randn(Shape::matrix(4 * h_p, h_p), std, rng),
            norm_self: ones(h_p),
            norm_cross: ones(h_p),
            norm_z: ones(d_v),
            norm_ffn: ones(h_p),
        }
    }
}

/// Full parameter set of one generator.
#[derive(Debug, Clone)]
pub struct GeneratorWeights<T: Element> {
    pub cfg: GeneratorConfig,
    /// Target matrix row count; fixes the down-factor shape `h_in×r`.
    pub h_in: usize,
    /// Target matrix column count; fixes the up-map shape `r×h_out`.
    pub h_out: usize,
    /// The `k` learnable perceptual queries, one row each.
    pub queries: Tensor<T>,
    pub blocks: Vec<GeneratorBlockWeights<T>>,
    pub final_norm: Tensor<T>,
    /// Shared map from `p_v` rows to flattened down-factors.
    pub w_share: Tensor<T>,
    /// Per-query up-maps; zero at init so fresh deltas vanish.
    pub w_s: Vec<Tensor<T>>,
}

/// An image-dependent low-rank update `down·up` bound to one LM matrix.
#[derive(Debug, Clone)]
pub struct LowRankDelta<T: Element> {
    /// `h_in×r`, generated from the image.
    pub down: Tensor<T>,
    /// `r×h_out`, learnable and image-independent.
    pub up: Tensor<T>,
    pub target: WeightKind,
    pub block_index: usize,
}

impl<T: Element> GeneratorWeights<T> {
    /// Deterministic initialization; `h` and `h_ff` size the target matrix.
    pub fn init(cfg: &GeneratorConfig, h: usize, h_ff: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (h_in, h_out) = cfg.target.shape(h, h_ff);
        let std = INIT_STD;
        let queries = Tensor::randn(Shape::matrix(cfg.k, cfg.h_p), std, rng);
        let blocks = (0..cfg.n_blocks).map(|_| GeneratorBlockWeights::init(cfg, rng)).collect();
        let final_norm = Tensor::from_vec(Shape::vector(cfg.h_p), vec![T::one(); cfg.h_p])?;
        let w_share = Tensor::randn(Shape::matrix(cfg.h_p, h_in * cfg.r), std, rng);
        let w_s = (0..cfg.k).map(|_| Tensor::zeros(Shape::matrix(cfg.r, h_out))).collect();
        Ok(GeneratorWeights {
            cfg: cfg.clone(),
            h_in,
            h_out,
            queries,
            blocks,
            final_norm,
            w_share,
            w_s,
        })
    }

    /// Runs the queries through the blocks against `z`; returns `p_v`
    /// of shape `k×h_p`.
    pub fn blocks_forward(&self, z: &VisualFeatures<T>) -> Result<Tensor<T>> {
        let heads = self.cfg.n_heads_p;
        let mut x = self.queries.clone();
        for b in &self.blocks {
            let n = x.rms_norm(&b.norm_self, RMS_EPS)?;
            let attn = attention(
                &n.matmul(&b.self_q)?,
                &n.matmul(&b.self_k)?,
                &n.matmul(&b.self_v)?,
                heads,
                false,
            )?;
            x = x.add(&attn.matmul(&b.self_o)?)?;

            let n = x.rms_norm(&b.norm_cross, RMS_EPS)?;
            let zn = z.z.rms_norm(&b.norm_z, RMS_EPS)?;
            let attn = attention(
                &n.matmul(&b.cross_q)?,
                &zn.matmul(&b.cross_k)?,
                &zn.matmul(&b.cross_v)?,
                heads,
                false,
            )?;
            x = x.add(&attn.matmul(&b.cross_o)?)?;

            let n = x.rms_norm(&b.norm_ffn, RMS_EPS)?;
            x = x.add(&crate::llm::ffn_forward(&n, &b.ffn_up, &b.ffn_down)?)?;
        }
        x.rms_norm(&self.final_norm, RMS_EPS)
    }

    /// Full generator pass: one delta per query, bound to the plan's
    /// block indices in order.
    pub fn generate_deltas(
        &self,
        z: &VisualFeatures<T>,
        plan: &InjectionPlan,
    ) -> Result<Vec<LowRankDelta<T>>> {
        if plan.target_blocks.len() != self.cfg.k {
            return Err(Error::InvalidConfig(format!(
                "plan names {} blocks but the generator produces k = {} deltas",
                plan.target_blocks.len(),
                self.cfg.k
            )));
        }
        let p_v = self.blocks_forward(z)?;
        let mut deltas = Vec::with_capacity(self.cfg.k);
        for (i, &block_index) in plan.target_blocks.iter().enumerate() {
            let flat = p_v.slice_rows(i, i + 1)?.matmul(&self.w_share)?;
            let down = flat.reshape(Shape::matrix(self.h_in, self.cfg.r))?;
            deltas.push(LowRankDelta {
                down,
                up: self.w_s[i].clone(),
                target: self.cfg.target,
                block_index,
            });
        }
        Ok(deltas)
    }

    /// All parameters under their checkpoint names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let tag = self.cfg.target.label();
        let mut out = vec![(format!("pwg.{tag}.queries"), self.queries.clone())];
        for (i, b) in self.blocks.iter().enumerate() {
            let base = format!("pwg.{tag}.block{i}");
            out.push((format!("{base}.self_q"), b.self_q.clone()));
            out.push((format!("{base}.self_k"), b.self_k.clone()));
            out.push((format!("{base}.self_v"), b.self_v.clone()));
            out.push((format!("{base}.self_o"), b.self_o.clone()));
            out.push((format!("{base}.cross_q"), b.cross_q.clone()));
            out.push((format!("{base}.cross_k"), b.cross_k.clone()));
            out.push((format!("{base}.cross_v"), b.cross_v.clone()));
            out.push((format!("{base}.cross_o"), b.cross_o.clone()));
            out.push((format!("{base}.ffn_up"), b.ffn_up.clone()));
            out.push((format!("{base}.ffn_down"), b.ffn_down.clone()));
            out.push((format!("{base}.norm_self"), b.norm_self.clone()));
            out.push((format!("{base}.norm_cross"), b.norm_cross.clone()));
            out.push((format!("{base}.norm_z"), b.norm_z.clone()));
            out.push((format!("{base}.norm_ffn"), b.norm_ffn.clone()));
        }
        out.push((format!("pwg.{tag}.final_norm"), self.final_norm.clone()));
        out.push((format!("pwg.{tag}.w_share"), self.w_share.clone()));
        for (i, w) in self.w_s.iter().enumerate() {
            out.push((format!("pwg.{tag}.w_s{i}"), w.clone()));
        }
        out
    }

    pub fn set_trainable(&self, trainable: bool) {
        for (_, p) in self.named_params() {
            p.set_requires_grad(trainable);
        }
    }
}
