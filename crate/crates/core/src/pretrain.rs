//! Masked-token pre-training of a single encoder.
//!
//! A random subset of patch tokens is hidden. Only the visible tokens (with
//! their own positional rows) and the classification token are embedded and
//! encoded. The encoded visible latents are put back at their positions, every
//! masked position receives the shared mask token plus its positional row,
//! and a single linear head predicts the original token at each masked
//! position. The loss is the mean squared error over masked tokens only.
//!
//! With `decoder_sees_sequence`, one extra encoder block runs over the
//! reassembled sequence before the head, so predictions can use visible
//! content.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{bind, gradients_of, Tape, Var};
use crate::data::{extract_sample, HsiCube, Pixel};
use crate::encoder::{
    block_on_tape, embed_and_encode_on_tape, Block, EncoderConfig, EncoderParams, EncoderState,
};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, StepLr};
use crate::params::{param_tree, trunc_normal, Linear, Tree, INIT_STD};
use crate::rng::{self, Purpose};
use crate::tokenizer::{RawTokens, Tokenization};
use crate::train::{self, LoopConfig, SampleOutcome};
use crate::Scalar;

/// Hidden patch tokens of one sample. Indices are 0-based token rows
/// (sequence position `i + 1`); the classification token is never masked.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    masked: Vec<usize>,
    visible: Vec<usize>,
    ratio: f64,
}

/// `round(ratio · n)`, rejected when it would hide nothing or everything.
pub fn mask_count(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("masking ratio must be in (0, 1), got {ratio}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("masking needs at least 2 tokens, got {n}")));
    }
    let count = (ratio * n as f64).round() as usize;
    if count == 0 || count == n {
        return Err(Error::InvalidArgument(format!(
            "masking ratio {ratio} over {n} tokens hides {count}; need between 1 and {}",
            n - 1
        )));
    }
    Ok(count)
}

/// Uniform sample without replacement of `round(ratio · n)` token indices.
pub fn sample_mask<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    let count = mask_count(n, ratio)?;
    let mut masked = rand::seq::index::sample(rng, n, count).into_vec();
    masked.sort_unstable();
    MaskPlan::new(n, masked, ratio)
}

impl MaskPlan {
    pub fn new(n: usize, mut masked: Vec<usize>, ratio: f64) -> Result<Self> {
        masked.sort_unstable();
        masked.dedup();
        if masked.is_empty() || masked.len() >= n || masked.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "mask must hide between 1 and {} of {n} tokens",
                n.saturating_sub(1)
            )));
        }
        let visible = (0..n).filter(|i| masked.binary_search(i).is_err()).collect();
        Ok(MaskPlan { masked, visible, ratio })
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn tokens(&self) -> usize {
        self.masked.len() + self.visible.len()
    }
}

/// Mean over masked tokens and token dimensions of `(pred - original)²`.
pub fn masked_mse<F: Scalar>(pred: &Array2<F>, raw: &RawTokens<F>, plan: &MaskPlan) -> Result<F> {
    if plan.masked.is_empty() {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    if plan.tokens() != raw.len() || pred.dim() != (plan.masked.len(), raw.token_dim()) {
        return Err(Error::Shape(format!(
            "prediction {:?} vs {} masked tokens of width {}",
            pred.dim(),
            plan.masked.len(),
            raw.token_dim()
        )));
    }
    let target = raw.select(&plan.masked);
    let diff = pred - &target;
    Ok(diff.mapv(|d| d * d).mean().expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<P> {
    /// `[1 × d]`, shared by every masked position.
    pub mask_token: P,
    /// `[token_dim × d]` reconstruction head.
    pub head: Linear<P>,
    /// Extra block over the reassembled sequence when `decoder_sees_sequence` is on.
    pub mixer: Option<Block<P>>,
}
param_tree!(DecoderParams { leaves: [mask_token], trees: [head, mixer] });

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainParams<P> {
    pub encoder: EncoderParams<P>,
    pub decoder: DecoderParams<P>,
}
param_tree!(PretrainParams { leaves: [], trees: [encoder, decoder] });

/// Architecture of a pre-training network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainArch {
    pub encoder: EncoderConfig,
    pub tokenization: Tokenization,
    pub patch_size: usize,
    pub bands: usize,
    #[serde(default)]
    pub decoder_sees_sequence: bool,
}

impl PretrainArch {
    /// Standard spectral or spatial encoder for `patch_size × patch_size × bands` samples.
    pub fn standard(tokenization: Tokenization, patch_size: usize, bands: usize) -> Result<Self> {
        tokenization.validate()?;
        let (n, token_dim) = tokenization.shape(patch_size, bands);
        let encoder = match tokenization {
            Tokenization::Spectral { .. } => EncoderConfig::spectral(n, token_dim),
            Tokenization::Spatial | Tokenization::Joint { .. } => EncoderConfig::spatial(n, token_dim),
        };
        Ok(PretrainArch {
            encoder,
            tokenization,
            patch_size,
            bands,
            decoder_sees_sequence: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.tokenization.validate()?;
        let shape = self.tokenization.shape(self.patch_size, self.bands);
        if shape != (self.encoder.tokens, self.encoder.token_dim) {
            return Err(Error::InvalidArgument(format!(
                "tokenization yields {shape:?} tokens but the encoder expects ({}, {})",
                self.encoder.tokens, self.encoder.token_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainModel<F> {
    pub arch: PretrainArch,
    pub params: PretrainParams<Array2<F>>,
}

/// Handles produced by one recorded masked forward pass.
pub struct MaskedForward {
    /// `[|masked| × token_dim]` predictions in masked-index order.
    pub prediction: Var,
    /// Encoded `[1 + |visible| × d]` sequence.
    pub latent: Var,
    /// Full `[N + 1 × d]` sequence handed to the decoder.
    pub reassembled: Var,
}

impl<F: Scalar> PretrainModel<F> {
    pub fn init<R: Rng + ?Sized>(arch: PretrainArch, rng: &mut R) -> Result<Self> {
        Self::init_with_std(arch, INIT_STD, rng)
    }

    pub fn init_with_std<R: Rng + ?Sized>(arch: PretrainArch, std: f64, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let encoder = EncoderState::init_with_std(arch.encoder, std, rng)?.params;
        let d = arch.encoder.dim;
        let decoder = DecoderParams {
            mask_token: trunc_normal(1, d, std, rng),
            head: Linear::init(arch.encoder.token_dim, d, std, rng),
            mixer: arch
                .decoder_sees_sequence
                .then(|| Block::init(d, arch.encoder.mlp_hidden, std, rng)),
        };
        Ok(PretrainModel {
            arch,
            params: PretrainParams { encoder, decoder },
        })
    }

    pub fn encoder_state(&self) -> EncoderState<F> {
        EncoderState {
            config: self.arch.encoder,
            params: self.params.encoder.clone(),
        }
    }

    pub fn num_params(&self) -> usize {
        crate::params::num_scalars(&self.params)
    }

    fn check(&self, raw: &RawTokens<F>, plan: &MaskPlan) -> Result<()> {
        let cfg = &self.arch.encoder;
        if raw.len() != cfg.tokens || raw.token_dim() != cfg.token_dim || plan.tokens() != cfg.tokens {
            return Err(Error::Shape(format!(
                "tokens {}x{} with a mask over {} do not match encoder {}x{}",
                raw.len(),
                raw.token_dim(),
                plan.tokens(),
                cfg.tokens,
                cfg.token_dim
            )));
        }
        Ok(())
    }

    /// Records the masked forward pass on `tape` against bound parameters.
    pub fn record(
        &self,
        tape: &mut Tape<F>,
        bound: &PretrainParams<Var>,
        raw: &RawTokens<F>,
        plan: &MaskPlan,
    ) -> Result<MaskedForward> {
        self.check(raw, plan)?;
        let heads = self.arch.encoder.heads;
        let latent = embed_and_encode_on_tape(tape, raw.select(&plan.visible), &plan.visible, &bound.encoder, heads);

        let pos = bound.encoder.embed.pos_embed;
        let masked_pos = tape.gather_rows(plan.masked.iter().map(|&i| (pos, i)).collect());
        let masked_rows = tape.add_row(masked_pos, bound.decoder.mask_token);

        let n = plan.tokens();
        let mut rows = Vec::with_capacity(n + 1);
        rows.push((latent, 0));
        let (mut vi, mut mi) = (0, 0);
        for i in 0..n {
            if plan.masked.get(mi) == Some(&i) {
                rows.push((masked_rows, mi));
                mi += 1;
            } else {
                rows.push((latent, vi + 1));
                vi += 1;
            }
        }
        let mut reassembled = tape.gather_rows(rows);
        let handle = reassembled;
        if let Some(mixer) = &bound.decoder.mixer {
            reassembled = block_on_tape(tape, reassembled, mixer, heads);
        }
        let at_masked = tape.gather_rows(plan.masked.iter().map(|&i| (reassembled, i + 1)).collect());
        let prediction = tape.linear(at_masked, &bound.decoder.head);
        Ok(MaskedForward {
            prediction,
            latent,
            reassembled: handle,
        })
    }

    /// Reconstructions `[|masked| × token_dim]` in masked-index order.
    pub fn masked_forward(&self, raw: &RawTokens<F>, plan: &MaskPlan) -> Result<Array2<F>> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let out = self.record(&mut tape, &bound, raw, plan)?;
        Ok(tape.value(out.prediction).clone())
    }

    /// Masked MSE and its gradient for every parameter.
    pub fn loss_and_grads(&self, raw: &RawTokens<F>, plan: &MaskPlan) -> Result<(F, PretrainParams<Array2<F>>)> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let out = self.record(&mut tape, &bound, raw, plan)?;
        let loss = tape.mse(out.prediction, raw.select(&plan.masked));
        let grads = tape.backward(loss, F::one())?;
        Ok((tape.scalar(loss), gradients_of(&tape, &grads, &bound)))
    }

    pub fn cast<G: Scalar>(&self) -> PretrainModel<G> {
        PretrainModel {
            arch: self.arch,
            params: crate::params::cast(&self.params),
        }
    }
}

/// Optimization settings for pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: StepLr,
    pub adam: AdamConfig,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 200,
            batch_size: 32,
            schedule: StepLr::new(5e-4),
            adam: AdamConfig::default(),
            mask_ratio: 0.7,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.schedule.base_lr > 0.0 && self.schedule.gamma > 0.0 && self.schedule.step_size > 0) {
            return Err(Error::InvalidArgument("learning-rate schedule must be positive".into()));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask_ratio must be in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct PretrainOutcome {
    pub last: PretrainModel<f32>,
    /// State at the end of the epoch with the lowest mean loss.
    pub best: PretrainModel<f32>,
    pub best_epoch: usize,
    pub log: Vec<EpochLoss>,
}

/// Tokens of the sample centered at `pixel`.
pub fn sample_tokens(cube: &HsiCube, pixel: Pixel, arch: &PretrainArch) -> Result<RawTokens<f32>> {
    let sample = extract_sample(cube, pixel, arch.patch_size)?;
    Ok(arch.tokenization.apply(&sample))
}

/// Pre-trains `model` on samples centered at `pixels` of a normalized cube.
/// Masks are drawn from a stream keyed by (seed, epoch, sample index).
pub fn pretrain(
    model: PretrainModel<f32>,
    cube: &HsiCube,
    pixels: &[Pixel],
    config: &PretrainConfig,
    mut progress: impl FnMut(&EpochLoss),
) -> Result<PretrainOutcome> {
    config.validate()?;
    model.arch.validate()?;
    if pixels.is_empty() {
        return Err(Error::InvalidArgument("pre-training set is empty".into()));
    }
    if cube.bands() != model.arch.bands {
        return Err(Error::Shape(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.arch.bands
        )));
    }
    mask_count(model.arch.encoder.tokens, config.mask_ratio)?;

    let loop_config = LoopConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        schedule: config.schedule,
        adam: config.adam,
        seed: config.seed,
    };
    let mut model = model;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_loss = f64::INFINITY;
    let mut log = Vec::with_capacity(config.epochs);
    let ratio = config.mask_ratio;
    let seed = config.seed;
    train::run(
        &mut model,
        |m| m.params.leaves_mut(),
        pixels.len(),
        &loop_config,
        |m, epoch, i| {
            let raw = sample_tokens(cube, pixels[i], &m.arch)?;
            let mut rng = rng::stream(seed, Purpose::Mask, epoch as u64, i as u64);
            let plan = sample_mask(raw.len(), ratio, &mut rng)?;
            let (loss, grads) = m.loss_and_grads(&raw, &plan)?;
            Ok(SampleOutcome {
                loss,
                correct: None,
                grads: grads.leaves().into_iter().cloned().collect(),
            })
        },
        |m, summary| {
            let record = EpochLoss {
                epoch: summary.epoch,
                loss: summary.loss,
                lr: summary.lr,
            };
            if summary.loss < best_loss {
                best_loss = summary.loss;
                best_epoch = summary.epoch;
                best = m.clone();
            }
            progress(&record);
            log.push(record);
            Ok(())
        },
    )?;
    Ok(PretrainOutcome {
        last: model,
        best,
        best_epoch,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_counts_follow_rounding() {
        let mut rng = rng::stream(1, Purpose::Mask, 0, 0);
        assert_eq!(sample_mask(200, 0.7, &mut rng).unwrap().masked().len(), 140);
        assert_eq!(sample_mask(49, 0.7, &mut rng).unwrap().masked().len(), 34);
    }

    #[test]
    fn mask_rejects_degenerate_requests() {
        let mut rng = rng::stream(1, Purpose::Mask, 0, 0);
        assert!(sample_mask(10, 1.0, &mut rng).is_err());
        assert!(sample_mask(10, 0.0, &mut rng).is_err());
        assert!(sample_mask(1, 0.5, &mut rng).is_err());
        assert!(sample_mask(2, 0.8, &mut rng).is_err()); // rounds to 2 of 2
        assert!(sample_mask(4, 0.1, &mut rng).is_err()); // rounds to 0
    }

    #[test]
    fn masks_are_deterministic_per_seed() {
        let a = sample_mask(50, 0.6, &mut rng::stream(9, Purpose::Mask, 3, 4)).unwrap();
        let b = sample_mask(50, 0.6, &mut rng::stream(9, Purpose::Mask, 3, 4)).unwrap();
        let c = sample_mask(50, 0.6, &mut rng::stream(9, Purpose::Mask, 3, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn masked_mse_cases() {
        let raw = RawTokens {
            tokens: Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64),
            mode: crate::tokenizer::TokenMode::Spatial,
        };
        let plan = MaskPlan::new(4, vec![1, 3], 0.5).unwrap();
        let exact = raw.select(plan.masked());
        assert_eq!(masked_mse(&exact, &raw, &plan).unwrap(), 0.0);
        assert_eq!(masked_mse(&(exact.clone() + 1.0), &raw, &plan).unwrap(), 1.0);
        assert!(masked_mse(&Array2::zeros((3, 3)), &raw, &plan).is_err());
    }
}
