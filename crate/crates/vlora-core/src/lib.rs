//! Parameter-space visual conditioning for a toy decoder-only language model.
//!
//! Instead of feeding image-derived tokens into the language model, an image
//! is encoded once, converted by perceptual weights generators into low-rank
//! weight deltas, and those deltas are either merged into the LM's weight
//! matrices (inference) or run as low-rank branches next to them (training).
//! The LM itself only ever sees text tokens.
//!
//! Modules:
//! - [`tensor`]: dense rank ≤ 4 tensors with reverse-mode autodiff.
//! - [`rng`]: seeded, reproducible parameter initialization.
//! - [`llm`]: the toy decoder-only LM (multi-head attention + two-layer FFN).
//! - [`vision`]: deterministic synthetic-image encoder standing in for a
//!   frozen pretrained vision backbone.
//! - [`generator`]: perceptual weights generators mapping visual features to
//!   low-rank deltas.
//! - [`inject`]: delta placement plans, merge and branch application modes.
//! - [`cost`]: closed-form FLOPs expressions and an instrumented matmul
//!   counter.
//! - [`train`]: synthetic captioning data, AdamW, freeze policies, and the
//!   training/eval loops.
//! - [`gradcheck`]: central-difference gradient verification.
//!
//! The crate is `no_std` + `alloc`; file IO, configs, and the CLI live in the
//! companion `vlora-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cost;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod inject;
pub mod llm;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Dtype, Element, Shape, Tensor};
