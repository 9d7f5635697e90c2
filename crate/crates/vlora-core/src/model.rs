//! The assembled pipeline: LM + frozen vision encoder + one generator per
//! targeted weight kind.
//!
//! A model is built once from a config and a seed (initialization order:
//! LM, vision encoder, generators in kind order — the order is part of the
//! reproducibility contract). Per image it produces `k × |kinds|` deltas,
//! applied either in branch mode (training, gradients flow) or merged
//! (inference, image paid for once). With fresh weights both paths equal
//! the bare LM exactly, because every up-map starts at zero.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorWeights, LowRankDelta, WeightKind};
use crate::inject::{self, InjectionPlan};
use crate::llm::{LlmConfig, LlmWeights};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};
use crate::vision::{SyntheticImage, VisionConfig, VisionEncoder, VisualFeatures};

/// Generator shape knobs shared by all of a model's generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorHyper {
    pub h_p: usize,
    pub n_blocks: usize,
    pub k: usize,
    pub r: usize,
    pub n_heads_p: usize,
}

/// Everything needed to build a model deterministically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub llm: LlmConfig,
    pub vision: VisionConfig,
    pub gen: GeneratorHyper,
    /// Targeted weight kinds; one generator each. Must be duplicate-free.
    pub kinds: Vec<WeightKind>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.llm.validate()?;
        self.vision.validate()?;
        if self.kinds.is_empty() {
            return Err(Error::InvalidConfig(String::from("model targets no weight kinds")));
        }
        let mut seen = self.kinds.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.kinds.len() {
            return Err(Error::InvalidConfig(String::from("duplicate weight kind in model config")));
        }
        if !self.llm.d_blocks.is_multiple_of(self.gen.k) {
            return Err(Error::InvalidConfig(format!(
                "k = {} deltas cannot be spread evenly over d_blocks = {}",
                self.gen.k, self.llm.d_blocks
            )));
        }
        // Each generator re-validates its own shape constraints.
        self.generator_config(self.kinds[0]).validate()
    }

    fn generator_config(&self, target: WeightKind) -> GeneratorConfig {
        GeneratorConfig {
            h_p: self.gen.h_p,
            n_blocks: self.gen.n_blocks,
            k: self.gen.k,
            r: self.gen.r,
            n_heads_p: self.gen.n_heads_p,
            d_v: self.vision.d_v,
            target,
        }
    }
}

/// A full visually-conditioned LM.
#[derive(Debug, Clone)]
pub struct VLoraModel<T: Element> {
    pub cfg: ModelConfig,
    pub llm: LlmWeights<T>,
    pub vision: VisionEncoder<T>,
    pub generators: Vec<GeneratorWeights<T>>,
    pub plan: InjectionPlan,
}

impl<T: Element> VLoraModel<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let llm = LlmWeights::init(&cfg.llm, &mut rng)?;
        let vision = VisionEncoder::init(&cfg.vision, &mut rng)?;
        let mut generators = Vec::with_capacity(cfg.kinds.len());
        for &kind in &cfg.kinds {
            let gcfg = cfg.generator_config(kind);
            generators.push(GeneratorWeights::init(&gcfg, cfg.llm.h, cfg.llm.h_ff, &mut rng)?);
        }
        let plan = inject::build_plan(cfg.llm.d_blocks, cfg.gen.k, cfg.kinds.clone())?;
        Ok(VLoraModel {
            cfg: cfg.clone(),
            llm,
            vision,
            generators,
            plan,
        })
    }

    pub fn encode(&self, img: &SyntheticImage) -> Result<VisualFeatures<T>> {
        self.vision.encode(img)
    }

    /// All deltas for one image: `k` per generator, in kind order.
    pub fn deltas(&self, z: &VisualFeatures<T>) -> Result<Vec<LowRankDelta<T>>> {
        let mut out = Vec::with_capacity(self.generators.len() * self.cfg.gen.k);
        for gen in &self.generators {
            out.extend(gen.generate_deltas(z, &self.plan)?);
        }
        Ok(out)
    }

    /// Training-mode forward: low-rank branches ride along the LM matrices.
    pub fn forward_branch(&self, img: &SyntheticImage, tokens: &[usize]) -> Result<Tensor<T>> {
        let z = self.encode(img)?;
        let deltas = self.deltas(&z)?;
        inject::branch_forward(&self.llm, &deltas, tokens)
    }

    /// Inference-mode forward: deltas merged into a weight snapshot first.
    pub fn forward_merged(&self, img: &SyntheticImage, tokens: &[usize]) -> Result<Tensor<T>> {
        let z = self.encode(img)?;
        let deltas = self.deltas(&z)?;
        inject::merge(&self.llm, &deltas)?.forward(tokens, &[])
    }

    /// The bare LM, ignoring the image pathway entirely.
    pub fn forward_blind(&self, tokens: &[usize]) -> Result<Tensor<T>> {
        self.llm.forward(tokens, &[])
    }

    /// Every parameter in the model under its checkpoint name.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = self.llm.named_params();
        out.extend(self.vision.named_params());
        for gen in &self.generators {
            out.extend(gen.named_params());
        }
        out
    }

    /// Parameters currently marked trainable, in checkpoint order.
    pub fn trainable_params(&self) -> Vec<Tensor<T>> {
        self.named_params()
            .into_iter()
            .filter(|(_, p)| p.requires_grad())
            .map(|(_, p)| p)
            .collect()
    }
}
