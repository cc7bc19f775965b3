#![allow(dead_code)]

use factoformer::params::Tree;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Overwrites every leaf with uniform values in `[-scale, scale]`.
pub fn randomize<T: Tree<Array2<f64>>>(tree: &mut T, scale: f64, rng: &mut impl Rng) {
    for leaf in tree.leaves_mut() {
        leaf.mapv_inplace(|_| rng.random_range(-scale..scale));
    }
}

/// Largest finite-difference disagreement found by [`gradient_check`].
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Below this magnitude absolute error is compared instead.
pub const REL_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-4;

/// Central differences with step `FD_STEP` on every scalar of every leaf.
pub fn gradient_check<T: Tree<Array2<f64>> + Clone>(
    params: &T,
    analytic: &[Array2<f64>],
    loss: impl Fn(&T) -> f64,
) -> GradCheck {
    let names = params.names();
    assert_eq!(names.len(), analytic.len(), "one gradient per leaf");
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut probe = params.clone();
    for (leaf_index, name) in names.iter().enumerate() {
        let shape = analytic[leaf_index].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let original = probe.leaves()[leaf_index][[r, c]];
                probe.leaves_mut()[leaf_index][[r, c]] = original + FD_STEP;
                let plus = loss(&probe);
                probe.leaves_mut()[leaf_index][[r, c]] = original - FD_STEP;
                let minus = loss(&probe);
                probe.leaves_mut()[leaf_index][[r, c]] = original;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let err = rel_error(analytic[leaf_index][[r, c]], numeric);
                out.checked += 1;
                if err > out.max_rel_error {
                    out.max_rel_error = err;
                    out.worst = format!("{name}[{r},{c}]");
                }
            }
        }
    }
    out
}

use factoformer::autograd::{bind, gradients_of, Tape};
use factoformer::encoder::{embed_and_encode_on_tape, EncoderConfig, EncoderState};
use factoformer::model::{cross_entropy, FactoFormer, ModelConfig};
use factoformer::pretrain::{masked_mse, sample_mask, MaskPlan, PretrainArch, PretrainModel};
use factoformer::tokenizer::{RawTokens, TokenMode, Tokenization};
use factoformer::data::{Pixel, Sample};
use ndarray::Array3;

pub fn tiny_encoder_config() -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        heads: 2,
        dim: 4,
        mlp_hidden: 3,
        tokens: 2,
        token_dim: 3,
    }
}

pub fn random_tokens(n: usize, dim: usize, mode: TokenMode, rng: &mut impl Rng) -> RawTokens<f64> {
    RawTokens {
        tokens: random_matrix(n, dim, 1.0, rng),
        mode,
    }
}

/// Encoder output projected onto a fixed seed: `Σ seed ⊙ encode(embed(raw))`.
pub fn encoder_check(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let cfg = tiny_encoder_config();
    let mut state = EncoderState::<f64>::init(cfg, &mut r).unwrap();
    randomize(&mut state.params, 0.5, &mut r);
    let raw = random_tokens(cfg.tokens, cfg.token_dim, TokenMode::Spatial, &mut r);
    let weights = random_matrix(cfg.seq_len(), cfg.dim, 1.0, &mut r);
    let positions: Vec<usize> = (0..cfg.tokens).collect();

    let mut tape = Tape::new();
    let bound = bind(&mut tape, &state.params);
    let out = embed_and_encode_on_tape(&mut tape, raw.tokens.clone(), &positions, &bound, cfg.heads);
    let grads = tape.backward_seeded(out, weights.clone()).unwrap();
    let analytic: Vec<_> = gradients_of(&tape, &grads, &bound).leaves().into_iter().cloned().collect();

    gradient_check(&state.params, &analytic, |p| {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, p);
        let out = embed_and_encode_on_tape(&mut tape, raw.tokens.clone(), &positions, &bound, cfg.heads);
        (tape.value(out) * &weights).sum()
    })
}

pub fn tiny_pretrain(decoder_sees_sequence: bool, seed: u64) -> (PretrainModel<f64>, RawTokens<f64>, MaskPlan) {
    let mut r = rng(seed);
    // Five joint tokens of width 3 from a 1×1×15 sample.
    let arch = PretrainArch {
        encoder: EncoderConfig {
            layers: 1,
            heads: 2,
            dim: 4,
            mlp_hidden: 3,
            tokens: 5,
            token_dim: 3,
        },
        tokenization: Tokenization::Joint { k: 3 },
        patch_size: 1,
        bands: 15,
        decoder_sees_sequence,
    };
    let mut model = PretrainModel::<f64>::init(arch, &mut r).unwrap();
    randomize(&mut model.params, 0.5, &mut r);
    let raw = random_tokens(5, 3, TokenMode::Joint, &mut r);
    let plan = sample_mask(5, 0.6, &mut r).unwrap();
    (model, raw, plan)
}

pub fn masked_pipeline_check(decoder_sees_sequence: bool, seed: u64) -> GradCheck {
    let (model, raw, plan) = tiny_pretrain(decoder_sees_sequence, seed);
    let (_, grads) = model.loss_and_grads(&raw, &plan).unwrap();
    let analytic: Vec<_> = grads.leaves().into_iter().cloned().collect();
    gradient_check(&model.params, &analytic, |p| {
        let probe = PretrainModel {
            arch: model.arch,
            params: p.clone(),
        };
        masked_mse(&probe.masked_forward(&raw, &plan).unwrap(), &raw, &plan).unwrap()
    })
}

/// Both encoders one layer wide 4, two classes, on a 3×3×2 sample.
pub fn tiny_model_config() -> ModelConfig {
    let enc = |tokens, token_dim| EncoderConfig {
        layers: 1,
        heads: 2,
        dim: 4,
        mlp_hidden: 3,
        tokens,
        token_dim,
    };
    ModelConfig {
        patch_size: 3,
        bands: 2,
        classes: 2,
        band_group: 1,
        spectral: enc(2, 9),
        spatial: enc(9, 2),
        head_hidden: 5,
    }
}

pub fn random_sample(size: usize, bands: usize, rng: &mut impl Rng) -> Sample {
    Sample {
        patch: Array3::from_shape_fn((size, size, bands), |_| rng.random_range(0.0..1.0)),
        label: None,
        center: Pixel::new(0, 0),
    }
}

pub fn model_check(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut model = FactoFormer::<f64>::init(tiny_model_config(), &mut r).unwrap();
    randomize(&mut model.params, 0.5, &mut r);
    let sample = random_sample(3, 2, &mut r);
    let (_, grads, _) = model.loss_and_grads(&sample, 2).unwrap();
    let analytic: Vec<_> = grads.leaves().into_iter().cloned().collect();
    gradient_check(&model.params, &analytic, |p| {
        let probe = FactoFormer {
            config: model.config,
            params: p.clone(),
        };
        let logits = probe.classify(&sample).unwrap();
        cross_entropy(logits.as_slice().unwrap(), 2).unwrap()
    })
}
