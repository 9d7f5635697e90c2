//! Floating-point-operation accounting: closed-form predictions and a
//! runtime counter to check them against.
//!
//! The closed forms compare two ways of giving a decoder-only LM access to
//! an image. Feeding `L` visual tokens alongside `C` text tokens makes every
//! block pay for `L + C` positions. Generating low-rank weight deltas
//! instead keeps the sequence at `C` and adds only the generator and the
//! delta math, so its cost is independent of `L`. All formulas count
//! multiply-adds as 2 FLOPs and ignore norms, softmax, and embeddings, which
//! is the convention the [`counter`] reproduces by tallying `2mnk` per
//! matrix multiply.
//!
//! Values at 7B scale reach ~10¹³, so everything is computed in `u128`.

use alloc::vec::Vec;

/// Process-wide FLOP tally fed by the matmul kernels.
///
/// Disabled by default so the hot path costs one relaxed load. Tests that
/// meter a model run should `reset`, `enable(true)`, run, `enable(false)`,
/// then read `total`. The tally is global: meter one region at a time.
pub mod counter {
    use core::sync::atomic::{AtomicBool, AtomicU64, Ordering};

    static ENABLED: AtomicBool = AtomicBool::new(false);
    static TOTAL: AtomicU64 = AtomicU64::new(0);

    pub fn enable(on: bool) {
        ENABLED.store(on, Ordering::Relaxed);
    }

    pub fn reset() {
        TOTAL.store(0, Ordering::Relaxed);
    }

    /// Adds `flops` to the tally if metering is on.
    pub fn record(flops: u64) {
        if ENABLED.load(Ordering::Relaxed) {
            TOTAL.fetch_add(flops, Ordering::Relaxed);
        }
    }

    pub fn total() -> u64 {
        TOTAL.load(Ordering::Relaxed)
    }
}

/// Model and workload sizes the closed forms range over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostParams {
    /// Decoder block count (d).
    pub d_blocks: u64,
    /// LM hidden size (h).
    pub h: u64,
    /// Text token count (C).
    pub c_text: u64,
    /// Visual token count (L); only the token-feeding baseline pays for it.
    pub l_visual: u64,
    /// Number of generated weight deltas (k).
    pub k_deltas: u64,
    /// Rank of each delta (r).
    pub r_rank: u64,
}

/// Per-block forward cost split into (attention, FFN) for `n` tokens:
/// `8nh² + 4n²h` and `16nh²`.
pub fn flops_block_parts(n: u64, h: u64) -> (u128, u128) {
    let (n, h) = (n as u128, h as u128);
    (8 * n * h * h + 4 * n * n * h, 16 * n * h * h)
}

/// LM forward cost when the image contributes `L` extra tokens:
/// `24(L+C)dh² + 4(L+C)²dh` (the block parts summed over `d` blocks).
pub fn flops_baseline(p: &CostParams) -> u128 {
    let n = (p.l_visual + p.c_text) as u128;
    let (d, h) = (p.d_blocks as u128, p.h as u128);
    24 * n * d * h * h + 4 * n * n * d * h
}

/// Training-step cost with generated deltas kept as separate low-rank
/// branches: `24Cdh² + 4C²dh + 24krh² + 12Ckh² + 14Ckh`.
pub fn flops_vlora_train(p: &CostParams) -> u128 {
    let (c, d, h) = (p.c_text as u128, p.d_blocks as u128, p.h as u128);
    let (k, r) = (p.k_deltas as u128, p.r_rank as u128);
    24 * c * d * h * h + 4 * c * c * d * h + 24 * k * r * h * h + 12 * c * k * h * h + 14 * c * k * h
}

/// Inference cost with deltas merged into the weights once per image:
/// `24Cdh² + 4C²dh + 24krh² + 12kh²`.
pub fn flops_vlora_infer(p: &CostParams) -> u128 {
    let (c, d, h) = (p.c_text as u128, p.d_blocks as u128, p.h as u128);
    let (k, r) = (p.k_deltas as u128, p.r_rank as u128);
    24 * c * d * h * h + 4 * c * c * d * h + 24 * k * r * h * h + 12 * k * h * h
}

/// One line of a visual-token-count sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRow {
    pub l_visual: u64,
    pub c_text: u64,
    pub flops_baseline: u128,
    pub flops_vlora_train: u128,
    pub flops_vlora_infer: u128,
    pub ratio_train: f64,
    pub ratio_infer: f64,
}

/// Evaluates all three models across `l_values`, holding everything but the
/// visual token count fixed. Ratios are delta-generation cost over baseline.
pub fn sweep(p: &CostParams, l_values: &[u64]) -> Vec<CostRow> {
    l_values
        .iter()
        .map(|&l| {
            let at_l = CostParams { l_visual: l, ..*p };
            let base = flops_baseline(&at_l);
            let train = flops_vlora_train(&at_l);
            let infer = flops_vlora_infer(&at_l);
            CostRow {
                l_visual: l,
                c_text: p.c_text,
                flops_baseline: base,
                flops_vlora_train: train,
                flops_vlora_infer: infer,
                ratio_train: train as f64 / base as f64,
                ratio_infer: infer as f64 / base as f64,
            }
        })
        .collect()
}
