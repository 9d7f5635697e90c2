//! Binding deltas to LM blocks, and the two ways of applying them.
//!
//! A plan spreads the `k` deltas evenly over the `d_blocks` decoder blocks
//! (stride `d_blocks/k`, starting at block 0) and names which weight kinds
//! participate. Application is either *merge* — materialize `Ŵ = W +
//! down·up` into an immutable snapshot for inference — or *branch* — keep
//! the factors separate and run `xW + (x·down)·up` during training so
//! gradients reach the generator. The base weights are never modified;
//! "unmerging" is dropping the snapshot.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::generator::{LowRankDelta, WeightKind};
use crate::llm::{DecoderBlockWeights, LlmWeights};
use crate::tensor::{Element, Tensor};

/// The five accepted weight-kind sets, by their letter names.
pub const KIND_SETS: [&str; 5] = ["qkvom", "qkvm", "qkv", "qko", "qk"];

/// Which blocks receive deltas, and on which matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionPlan {
    /// Strictly increasing block indices, one per delta.
    pub target_blocks: Vec<usize>,
    /// Participating weight kinds (the `m` slot expands to both FFN kinds).
    pub kinds: Vec<WeightKind>,
}

/// Expands one of [`KIND_SETS`] into weight kinds; anything else is
/// rejected, including reorderings.
pub fn parse_kind_set(s: &str) -> Result<Vec<WeightKind>> {
    if !KIND_SETS.contains(&s) {
        return Err(Error::InvalidConfig(format!(
            "unknown weight-kind set {s:?}; expected one of {}",
            KIND_SETS.join(", ")
        )));
    }
    let mut kinds = Vec::new();
    for letter in s.chars() {
        match letter {
            'q' => kinds.push(WeightKind::Query),
            'k' => kinds.push(WeightKind::Key),
            'v' => kinds.push(WeightKind::Value),
            'o' => kinds.push(WeightKind::Output),
            'm' => {
                kinds.push(WeightKind::FfnUp);
                kinds.push(WeightKind::FfnDown);
            }
            _ => unreachable!("KIND_SETS only contains qkvom letters"),
        }
    }
    Ok(kinds)
}

/// The letter form of a kind list, if it is one of the five sets.
pub fn kind_set_label(kinds: &[WeightKind]) -> Option<&'static str> {
    KIND_SETS
        .iter()
        .find(|s| parse_kind_set(s).map(|k| k == kinds).unwrap_or(false))
        .copied()
}

/// Evenly strided plan: blocks `{0, s, 2s, …}` with `s = d_blocks / k`.
pub fn build_plan(d_blocks: usize, k: usize, kinds: Vec<WeightKind>) -> Result<InjectionPlan> {
    if k == 0 || d_blocks == 0 {
        return Err(Error::InvalidConfig(String::from(
            "injection needs d_blocks >= 1 and k >= 1",
        )));
    }
    if !d_blocks.is_multiple_of(k) {
        return Err(Error::InvalidConfig(format!(
            "k = {k} deltas cannot be spread evenly over d_blocks = {d_blocks}"
        )));
    }
    if kinds.is_empty() {
        return Err(Error::InvalidConfig(String::from("no weight kinds selected")));
    }
    let stride = d_blocks / k;
    Ok(InjectionPlan {
        target_blocks: (0..k).map(|i| i * stride).collect(),
        kinds,
    })
}

/// Materializes `Ŵ = W + down·up` for every delta into a fresh snapshot.
///
/// Affected matrices become new detached tensors; untouched ones share
/// storage with the base. The base model is left unmodified, so repeated
/// merges of different images always start from identical weights.
pub fn merge<T: Element>(base: &LlmWeights<T>, deltas: &[LowRankDelta<T>]) -> Result<LlmWeights<T>> {
    for d in deltas {
        if d.block_index >= base.blocks.len() {
            return Err(Error::shape(
                "merge",
                format!("delta targets block {} of {}", d.block_index, base.blocks.len()),
            ));
        }
    }
    let mut blocks: Vec<DecoderBlockWeights<T>> = base.blocks.clone();
    for d in deltas {
        let dw = d.down.detach().matmul(&d.up.detach())?;
        let b = &mut blocks[d.block_index];
        let slot = match d.target {
            WeightKind::Query => &mut b.wq,
            WeightKind::Key => &mut b.wk,
            WeightKind::Value => &mut b.wv,
            WeightKind::Output => &mut b.wo,
            WeightKind::FfnUp => &mut b.w1,
            WeightKind::FfnDown => &mut b.w2,
        };
        *slot = slot.detach().add(&dw)?;
    }
    Ok(LlmWeights {
        cfg: base.cfg.clone(),
        tok_emb: base.tok_emb.clone(),
        pos_emb: base.pos_emb.clone(),
        blocks,
        final_norm: base.final_norm.clone(),
        lm_head: base.lm_head.clone(),
    })
}

/// Training-mode forward: the LM runs with per-matrix low-rank branches.
pub fn branch_forward<T: Element>(
    base: &LlmWeights<T>,
    deltas: &[LowRankDelta<T>],
    tokens: &[usize],
) -> Result<Tensor<T>> {
    base.forward(tokens, deltas)
}
