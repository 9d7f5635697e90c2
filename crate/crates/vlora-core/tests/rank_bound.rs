//! Every generated delta must be a genuinely low-rank update: at most `r`
//! non-negligible singular values, checked against an SVD from an
//! independent linear-algebra library.

use nalgebra::DMatrix;
use vlora_core::generator::WeightKind;
use vlora_core::llm::LlmConfig;
use vlora_core::model::{GeneratorHyper, ModelConfig, VLoraModel};
use vlora_core::train::{make_dataset, train_loop, FreezePolicy, TrainConfig};
use vlora_core::vision::VisionConfig;
use vlora_core::{Rng, Tensor};

const RANK: usize = 8;

fn sorted_singular_values(m: &Tensor<f64>) -> Vec<f64> {
    let dims = m.shape().dims().to_vec();
    let dm = DMatrix::from_row_slice(dims[0], dims[1], &m.to_vec());
    let mut sv: Vec<f64> = dm.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

#[test]
fn trained_deltas_have_rank_at_most_r() {
    let cfg = ModelConfig {
        llm: LlmConfig {
            d_blocks: 8,
            h: 64,
            n_heads: 4,
            h_ff: 256,
            vocab: 64,
            max_seq: 24,
        },
        vision: VisionConfig { g: 4, alphabet: 63, d_v: 48 },
        gen: GeneratorHyper {
            h_p: 32,
            n_blocks: 2,
            k: 4,
            r: RANK,
            n_heads_p: 2,
        },
        kinds: WeightKind::ALL.to_vec(),
    };
    let model = VLoraModel::<f64>::init(&cfg, 50).unwrap();
    let mut rng = Rng::new(51);
    let dataset = make_dataset(&cfg.vision, 16, &mut rng);
    let tc = TrainConfig {
        steps: 15,
        batch_size: 4,
        peak_lr: 3e-3,
        warmup_steps: 3,
        seed: 52,
    };
    train_loop(&model, &dataset, &tc, FreezePolicy::Pretrain, false, |_| {}).unwrap();

    let z = model.encode(&dataset[0].image).unwrap();
    let deltas = model.deltas(&z).unwrap();
    assert_eq!(deltas.len(), 4 * 6);
    for delta in &deltas {
        let full = delta.down.matmul(&delta.up).unwrap().detach();
        let sv = sorted_singular_values(&full);
        assert!(sv[0] > 0.0, "{:?} delta never moved off zero", delta.target);
        // Generic inputs should exhaust the whole budget, not just stay
        // under it; a collapsed factor would make the bound vacuous.
        assert!(
            sv[RANK - 1] > 1e-12 * sv[0],
            "{:?} delta collapsed below rank {RANK}",
            delta.target
        );
        for (i, s) in sv.iter().enumerate().skip(RANK) {
            assert!(
                *s < 1e-6 * sv[0],
                "{:?} delta has σ[{i}] = {s:e} vs σ[0] = {:e}",
                delta.target,
                sv[0]
            );
        }
    }
}

#[test]
fn svd_oracle_rejects_full_rank_matrices() {
    // Sanity check on the oracle itself: a dense Gaussian matrix has no
    // such spectral cliff, so the bound above is not trivially true.
    let mut rng = Rng::new(53);
    let m = Tensor::<f64>::randn(vlora_core::Shape::matrix(64, 64), 1.0, &mut rng);
    let sv = sorted_singular_values(&m);
    assert!(sv[RANK] > 1e-3 * sv[0], "Gaussian spectrum unexpectedly cliffed");
}
