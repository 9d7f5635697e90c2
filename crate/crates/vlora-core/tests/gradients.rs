//! Central-difference verification of every differentiable op, the LM
//! loss, and the full image-to-loss pipeline.

use vlora_core::gradcheck::{finite_diff_check, finite_diff_check_sampled, finite_diff_check_where};
use vlora_core::generator::WeightKind;
use vlora_core::llm::LlmConfig;
use vlora_core::model::{GeneratorHyper, ModelConfig, VLoraModel};
use vlora_core::train::{caption_for, pair_loss, SyntheticPair};
use vlora_core::vision::{SyntheticImage, VisionConfig};
use vlora_core::{Rng, Shape, Tensor};

const TOL: f64 = 1e-4;
const H_STEP: f64 = 1e-5;

fn randn(shape: Shape, seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 0.7, &mut Rng::new(seed)).with_requires_grad(true)
}

/// Folds any tensor into a scalar with fixed random mixing weights, so the
/// incoming gradient at the op under test is dense and non-uniform.
fn mix(t: &Tensor<f64>, seed: u64) -> vlora_core::Result<Tensor<f64>> {
    let w = Tensor::randn(t.shape().clone(), 1.0, &mut Rng::new(seed));
    t.mul(&w)?.sum_all()
}

#[test]
fn matmul_gradients_pass_central_difference() {
    let a = randn(Shape::matrix(3, 4), 1);
    let b = randn(Shape::matrix(4, 5), 2);
    let check = finite_diff_check(&[a.clone(), b.clone()], H_STEP, || mix(&a.matmul(&b)?, 3)).unwrap();
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn matmul_nt_gradients_pass_central_difference() {
    let a = randn(Shape::matrix(3, 4), 4);
    let b = randn(Shape::matrix(5, 4), 5);
    let check = finite_diff_check(&[a.clone(), b.clone()], H_STEP, || mix(&a.matmul_nt(&b)?, 6)).unwrap();
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn add_and_mul_gradients_pass_central_difference() {
    let a = randn(Shape::matrix(2, 6), 7);
    let b = randn(Shape::matrix(2, 6), 8);
    let check = finite_diff_check(&[a.clone(), b.clone()], H_STEP, || {
        mix(&a.add(&b)?.mul(&a)?, 9)
    })
    .unwrap();
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn scale_and_silu_gradients_pass_central_difference() {
    let x = randn(Shape::matrix(3, 5), 10);
    let check = finite_diff_check(std::slice::from_ref(&x), H_STEP, || mix(&x.scale(3.7)?.silu()?, 11)).unwrap();
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn softmax_gradients_pass_central_difference() {
    let x = randn(Shape::matrix(4, 5), 12);
    let plain = finite_diff_check(std::slice::from_ref(&x), H_STEP, || mix(&x.softmax_rows(false)?, 13)).unwrap();
    assert!(plain.max_rel_err < TOL, "plain rel err {}", plain.max_rel_err);

    let sq = randn(Shape::matrix(4, 4), 14);
    let causal = finite_diff_check(std::slice::from_ref(&sq), H_STEP, || mix(&sq.softmax_rows(true)?, 15)).unwrap();
    assert!(causal.max_rel_err < TOL, "causal rel err {}", causal.max_rel_err);
}

#[test]
fn rms_norm_gradients_pass_central_difference() {
    let x = randn(Shape::matrix(3, 6), 16);
    let gain = randn(Shape::vector(6), 17);
    let check =
        finite_diff_check(&[x.clone(), gain.clone()], H_STEP, || mix(&x.rms_norm(&gain, 1e-5)?, 18))
            .unwrap();
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn embed_gradients_pass_central_difference() {
    let table = randn(Shape::matrix(5, 4), 19);
    let check = finite_diff_check(std::slice::from_ref(&table), H_STEP, || {
        mix(&table.embed(&[0, 2, 4, 2])?, 20)
    })
    .unwrap();
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn slice_concat_reshape_gradients_pass_central_difference() {
    let x = randn(Shape::matrix(4, 6), 21);
    let check = finite_diff_check(std::slice::from_ref(&x), H_STEP, || {
        let left = x.slice_cols(0, 2)?;
        let right = x.slice_cols(2, 6)?;
        let glued = Tensor::concat_cols(&[right, left])?;
        let rows = glued.slice_rows(1, 4)?;
        mix(&rows.reshape(Shape::matrix(9, 2))?, 22)
    })
    .unwrap();
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn cross_entropy_gradients_pass_central_difference() {
    let logits = randn(Shape::matrix(3, 7), 23);
    let check =
        finite_diff_check(std::slice::from_ref(&logits), H_STEP, || logits.cross_entropy_rows(&[1, 0, 6])).unwrap();
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn lm_loss_gradients_pass_central_difference() {
    let cfg = LlmConfig {
        d_blocks: 2,
        h: 8,
        n_heads: 2,
        h_ff: 16,
        vocab: 11,
        max_seq: 6,
    };
    let lm = vlora_core::llm::LlmWeights::<f64>::init(&cfg, &mut Rng::new(24)).unwrap();
    lm.set_trainable(true);
    let params: Vec<Tensor<f64>> = lm.named_params().into_iter().map(|(_, p)| p).collect();
    let tokens = [1usize, 4, 9, 2, 7];
    let mut rng = Rng::new(25);
    let check = finite_diff_check_sampled(&params, H_STEP, 6, &mut rng, || {
        lm.forward(&tokens[..4], &[])?.cross_entropy_rows(&tokens[1..])
    })
    .unwrap();
    assert!(check.coords_checked >= 6 * params.len() / 2);
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}

#[test]
fn full_pipeline_gradients_pass_central_difference() {
    // Image → frozen encoder → generators → branches → caption loss, with
    // sampled coordinates spanning every trainable parameter family.
    let cfg = ModelConfig {
        llm: LlmConfig {
            d_blocks: 4,
            h: 16,
            n_heads: 2,
            h_ff: 32,
            vocab: 16,
            max_seq: 8,
        },
        vision: VisionConfig { g: 2, alphabet: 8, d_v: 12 },
        gen: GeneratorHyper {
            h_p: 16,
            n_blocks: 2,
            k: 2,
            r: 2,
            n_heads_p: 2,
        },
        kinds: vec![WeightKind::Value, WeightKind::FfnUp],
    };
    let model = VLoraModel::<f64>::init(&cfg, 26).unwrap();

    // At the 0.02-scale init the attention scores are nearly zero, softmax
    // is uniform, and key-side gradients drop to ~1e-11 — below what f64
    // central differences can resolve. Checking the chain rule needs a
    // generic point, so the generators and the frozen image tables are
    // re-randomized at O(1) scales (zero up-maps would likewise blank out
    // every gradient upstream of the down-factors).
    let mut rng = Rng::new(27);
    for gen in &model.generators {
        for (name, p) in gen.named_params() {
            if name.contains("norm") {
                continue;
            }
            let std = if name.contains("w_s") { 0.1 } else { 0.3 };
            p.apply_update(|buf| {
                for v in buf.iter_mut() {
                    *v = rng.normal(std);
                }
            });
        }
    }
    for (_, p) in model.vision.named_params() {
        p.apply_update(|buf| {
            for v in buf.iter_mut() {
                *v = rng.normal(1.0);
            }
        });
    }

    let img = SyntheticImage::random(2, 8, &mut rng);
    let pair = SyntheticPair {
        caption: caption_for(&img),
        image: img,
    };

    let by_name: std::collections::BTreeMap<String, Tensor<f64>> = model.named_params().into_iter().collect();
    let picked = [
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
    let params: Vec<Tensor<f64>> = picked
        .iter()
        .map(|name| by_name.get(*name).unwrap_or_else(|| panic!("missing {name}")).clone())
        .collect();
    for p in &params {
        p.set_requires_grad(true);
    }

    // Floor the sampled coordinates at 1e-4: at h = 1e-5 a central
    // difference carries ε·|f|/h ≈ 6e-11 of rounding noise plus ~h² of
    // truncation, so weaker gradients cannot be resolved, only
    // mismeasured.
    let mut sample_rng = Rng::new(28);
    let check = finite_diff_check_where(&params, 1e-5, 6, 1e-4, &mut sample_rng, || {
        pair_loss(&model, &pair, false)
    })
    .unwrap();
    assert!(check.coords_checked >= 64, "only {} coords", check.coords_checked);
    assert!(check.max_rel_err < TOL, "rel err {}", check.max_rel_err);
}
