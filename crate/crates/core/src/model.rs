//! The factorized classifier (spectral and spatial encoders fused through
//! their classification tokens), the single-encoder joint baseline, and the
//! supervised fine-tuning loop.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{bind, gradients_of, Tape, Var};
use crate::data::{extract_sample, HsiCube, LabeledPixel, Sample};
use crate::encoder::{
    embed_and_encode_on_tape, encoder_macs, EncoderConfig, EncoderParams, EncoderState, MacCount,
};
use crate::encoder::cost::mlp_head_macs;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, StepLr};
use crate::params::{num_scalars, param_tree, Linear, Tree, INIT_STD};
use crate::tokenizer::{RawTokens, Tokenization};
use crate::train::{self, LoopConfig, SampleOutcome};
use crate::Scalar;

/// Default hidden width of the classification MLP.
pub const HEAD_HIDDEN: usize = 64;

/// `in → hidden (GELU) → classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead<P> {
    pub hidden: Linear<P>,
    pub output: Linear<P>,
}
param_tree!(MlpHead { leaves: [], trees: [hidden, output] });

impl<F: Scalar> MlpHead<Array2<F>> {
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, classes: usize, std: f64, rng: &mut R) -> Self {
        MlpHead {
            hidden: Linear::init(hidden, in_dim, std, rng),
            output: Linear::init(classes, hidden, std, rng),
        }
    }

    /// Plain evaluation of the head on one feature vector.
    pub fn apply(&self, features: &Array1<F>) -> Array1<F> {
        let h = self.hidden.weight.dot(features) + self.hidden.bias.row(0);
        let h = h.mapv(gelu);
        self.output.weight.dot(&h) + self.output.bias.row(0)
    }
}

fn gelu<F: Scalar>(x: F) -> F {
    let half = F::from_f64_lossy(0.5);
    half * x * (F::one() + (x * F::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Records the head on a `[1 × in]` feature row.
pub fn head_on_tape<F: Scalar>(tape: &mut Tape<F>, x: Var, head: &MlpHead<Var>) -> Var {
    let h = tape.linear(x, &head.hidden);
    let h = tape.gelu(h);
    tape.linear(h, &head.output)
}

/// `-log softmax(logits)[label]` in log-sum-exp form; `label` is 1-based.
pub fn cross_entropy<F: Scalar>(logits: &[F], label: usize) -> Result<F> {
    if label == 0 || label > logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside 1..={}",
            logits.len()
        )));
    }
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let sum: F = logits.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln() - logits[label - 1])
}

/// 1-based index of the largest logit (first one on ties).
pub fn argmax_label<F: Scalar>(logits: &[F]) -> u16 {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best as u16 + 1
}

/// Anything that maps a sample to class scores.
pub trait Classifier: Sync {
    fn patch_size(&self) -> usize;
    fn bands(&self) -> usize;
    fn classes(&self) -> usize;
    fn logits(&self, sample: &Sample) -> Result<Array1<f32>>;

    /// 1-based predicted class.
    fn predict(&self, sample: &Sample) -> Result<u16> {
        Ok(argmax_label(self.logits(sample)?.as_slice().expect("contiguous")))
    }
}

/// Models that the fine-tuning loop can train.
pub trait Trainable: Classifier + Clone {
    /// Cross-entropy on one labeled sample, whether the prediction was right,
    /// and the gradient of every parameter in leaf order.
    fn sample_step(&self, sample: &Sample, label: u16) -> Result<(f32, bool, Vec<Array2<f32>>)>;
    fn leaves_mut(&mut self) -> Vec<&mut Array2<f32>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub bands: usize,
    pub classes: usize,
    /// Adjacent bands per spectral token.
    pub band_group: usize,
    pub spectral: EncoderConfig,
    pub spatial: EncoderConfig,
    pub head_hidden: usize,
}

impl ModelConfig {
    /// Standard encoders for `patch_size × patch_size × bands` samples.
    pub fn standard(patch_size: usize, bands: usize, classes: usize, band_group: usize) -> Result<Self> {
        let spectral_tok = Tokenization::Spectral { group: band_group };
        spectral_tok.validate()?;
        let (n_spe, d_spe) = spectral_tok.shape(patch_size, bands);
        let (n_spa, d_spa) = Tokenization::Spatial.shape(patch_size, bands);
        let config = ModelConfig {
            patch_size,
            bands,
            classes,
            band_group,
            spectral: EncoderConfig::spectral(n_spe, d_spe),
            spatial: EncoderConfig::spatial(n_spa, d_spa),
            head_hidden: HEAD_HIDDEN,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn spectral_tokenization(&self) -> Tokenization {
        Tokenization::Spectral { group: self.band_group }
    }

    pub fn fused_dim(&self) -> usize {
        self.spectral.dim + self.spatial.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size must be odd, got {}",
                self.patch_size
            )));
        }
        if self.classes < 1 || self.head_hidden < 1 || self.bands < 1 {
            return Err(Error::InvalidArgument("bands, classes and head_hidden must be positive".into()));
        }
        self.spectral.validate()?;
        self.spatial.validate()?;
        let spe = self.spectral_tokenization().shape(self.patch_size, self.bands);
        let spa = Tokenization::Spatial.shape(self.patch_size, self.bands);
        if spe != (self.spectral.tokens, self.spectral.token_dim) || spa != (self.spatial.tokens, self.spatial.token_dim)
        {
            return Err(Error::InvalidArgument(format!(
                "encoder token shapes do not fit {}x{}x{} samples",
                self.patch_size, self.patch_size, self.bands
            )));
        }
        Ok(())
    }

    /// Multiply-adds for one sample: both encoders plus the fusion head.
    pub fn macs(&self) -> MacCount {
        encoder_macs(&self.spectral)
            + encoder_macs(&self.spatial)
            + mlp_head_macs(self.fused_dim(), self.head_hidden, self.classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactoFormerParams<P> {
    pub spectral: EncoderParams<P>,
    pub spatial: EncoderParams<P>,
    pub head: MlpHead<P>,
}
param_tree!(FactoFormerParams { leaves: [], trees: [spectral, spatial, head] });

#[derive(Debug, Clone, PartialEq)]
pub struct FactoFormer<F> {
    pub config: ModelConfig,
    pub params: FactoFormerParams<Array2<F>>,
}

fn sample_shape_check(sample: &Sample, patch: usize, bands: usize) -> Result<()> {
    if sample.size() != patch || sample.bands() != bands {
        return Err(Error::Shape(format!(
            "sample {}x{}x{} does not match model {}x{}x{}",
            sample.size(),
            sample.size(),
            sample.bands(),
            patch,
            patch,
            bands
        )));
    }
    Ok(())
}

fn check_encoder(name: &str, expected: &EncoderConfig, state: &EncoderState<f32>) -> Result<()> {
    if &state.config != expected {
        return Err(Error::Checkpoint(format!(
            "{name} checkpoint config {:?} does not match model {:?}",
            state.config, expected
        )));
    }
    state.check_shapes()
}

impl<F: Scalar> FactoFormer<F> {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        Self::init_with_std(config, INIT_STD, rng)
    }

    pub fn init_with_std<R: Rng + ?Sized>(config: ModelConfig, std: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let spectral = EncoderState::init_with_std(config.spectral, std, rng)?.params;
        let spatial = EncoderState::init_with_std(config.spatial, std, rng)?.params;
        let head = MlpHead::init(config.fused_dim(), config.head_hidden, config.classes, std, rng);
        Ok(FactoFormer {
            config,
            params: FactoFormerParams { spectral, spatial, head },
        })
    }

    pub fn spectral_state(&self) -> EncoderState<F> {
        EncoderState {
            config: self.config.spectral,
            params: self.params.spectral.clone(),
        }
    }

    pub fn spatial_state(&self) -> EncoderState<F> {
        EncoderState {
            config: self.config.spatial,
            params: self.params.spatial.clone(),
        }
    }

    pub fn num_params(&self) -> usize {
        num_scalars(&self.params)
    }

    pub fn tokens(&self, sample: &Sample) -> Result<(RawTokens<F>, RawTokens<F>)> {
        sample_shape_check(sample, self.config.patch_size, self.config.bands)?;
        Ok((
            self.config.spectral_tokenization().apply(sample).cast(),
            Tokenization::Spatial.apply(sample).cast(),
        ))
    }

    /// Records both encoders; returns the `[1 × (d_spe + d_spa)]` fused row.
    pub fn record_features(
        &self,
        tape: &mut Tape<F>,
        bound: &FactoFormerParams<Var>,
        spectral: &RawTokens<F>,
        spatial: &RawTokens<F>,
    ) -> Var {
        let all_spe: Vec<usize> = (0..spectral.len()).collect();
        let all_spa: Vec<usize> = (0..spatial.len()).collect();
        let spe = embed_and_encode_on_tape(
            tape,
            spectral.tokens.clone(),
            &all_spe,
            &bound.spectral,
            self.config.spectral.heads,
        );
        let spa = embed_and_encode_on_tape(
            tape,
            spatial.tokens.clone(),
            &all_spa,
            &bound.spatial,
            self.config.spatial.heads,
        );
        let cls_spe = tape.gather_rows(vec![(spe, 0)]);
        let cls_spa = tape.gather_rows(vec![(spa, 0)]);
        tape.concat_cols(&[cls_spe, cls_spa])
    }

    /// Records the forward pass; returns the `[1 × C]` logits.
    pub fn record(
        &self,
        tape: &mut Tape<F>,
        bound: &FactoFormerParams<Var>,
        spectral: &RawTokens<F>,
        spatial: &RawTokens<F>,
    ) -> Var {
        let fused = self.record_features(tape, bound, spectral, spatial);
        head_on_tape(tape, fused, &bound.head)
    }

    /// Concatenated spectral and spatial classification-token outputs.
    pub fn features(&self, sample: &Sample) -> Result<Array1<F>> {
        let (spe, spa) = self.tokens(sample)?;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let fused = self.record_features(&mut tape, &bound, &spe, &spa);
        Ok(tape.value(fused).row(0).to_owned())
    }

    /// Class scores for one sample.
    pub fn classify(&self, sample: &Sample) -> Result<Array1<F>> {
        let (spe, spa) = self.tokens(sample)?;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let logits = self.record(&mut tape, &bound, &spe, &spa);
        Ok(tape.value(logits).row(0).to_owned())
    }

    /// Cross-entropy of one sample (1-based label), its gradients, and the logits.
    pub fn loss_and_grads(
        &self,
        sample: &Sample,
        label: u16,
    ) -> Result<(F, FactoFormerParams<Array2<F>>, Array1<F>)> {
        let label = label as usize;
        if label == 0 || label > self.config.classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside 1..={}",
                self.config.classes
            )));
        }
        let (spe, spa) = self.tokens(sample)?;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let logits = self.record(&mut tape, &bound, &spe, &spa);
        let loss = tape.cross_entropy(logits, label - 1);
        let grads = tape.backward(loss, F::one())?;
        Ok((
            tape.scalar(loss),
            gradients_of(&tape, &grads, &bound),
            tape.value(logits).row(0).to_owned(),
        ))
    }

    pub fn cast<G: Scalar>(&self) -> FactoFormer<G> {
        FactoFormer {
            config: self.config,
            params: crate::params::cast(&self.params),
        }
    }
}

impl FactoFormer<f32> {
    /// Encoders copied from pre-trained states; the fusion head is freshly
    /// initialized. Reconstruction parameters are not part of the model.
    pub fn from_pretrained<R: Rng + ?Sized>(
        config: ModelConfig,
        spectral: &EncoderState<f32>,
        spatial: &EncoderState<f32>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        check_encoder("spectral", &config.spectral, spectral)?;
        check_encoder("spatial", &config.spatial, spatial)?;
        let head = MlpHead::init(config.fused_dim(), config.head_hidden, config.classes, INIT_STD, rng);
        Ok(FactoFormer {
            config,
            params: FactoFormerParams {
                spectral: spectral.params.clone(),
                spatial: spatial.params.clone(),
                head,
            },
        })
    }
}

impl Classifier for FactoFormer<f32> {
    fn patch_size(&self) -> usize {
        self.config.patch_size
    }

    fn bands(&self) -> usize {
        self.config.bands
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn logits(&self, sample: &Sample) -> Result<Array1<f32>> {
        self.classify(sample)
    }
}

impl Trainable for FactoFormer<f32> {
    fn sample_step(&self, sample: &Sample, label: u16) -> Result<(f32, bool, Vec<Array2<f32>>)> {
        let (loss, grads, logits) = self.loss_and_grads(sample, label)?;
        let correct = argmax_label(logits.as_slice().expect("contiguous")) == label;
        Ok((loss, correct, grads.leaves().into_iter().cloned().collect()))
    }

    fn leaves_mut(&mut self) -> Vec<&mut Array2<f32>> {
        self.params.leaves_mut()
    }
}

/// Single encoder over joint spectral-spatial tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    pub patch_size: usize,
    pub bands: usize,
    pub classes: usize,
    /// Bands per joint token.
    pub k: usize,
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
}

impl JointConfig {
    /// Width-64 encoder (the spatial layout) over `1 × 1 × k` tokens.
    pub fn standard(patch_size: usize, bands: usize, classes: usize, k: usize) -> Result<Self> {
        let tok = Tokenization::Joint { k };
        tok.validate()?;
        let (n, token_dim) = tok.shape(patch_size, bands);
        let config = JointConfig {
            patch_size,
            bands,
            classes,
            k,
            encoder: EncoderConfig::spatial(n, token_dim),
            head_hidden: HEAD_HIDDEN,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn tokenization(&self) -> Tokenization {
        Tokenization::Joint { k: self.k }
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenization().validate()?;
        self.encoder.validate()?;
        if self.patch_size % 2 == 0 || self.classes == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidArgument(
                "patch size must be odd and classes, head_hidden positive".into(),
            ));
        }
        let shape = self.tokenization().shape(self.patch_size, self.bands);
        if shape != (self.encoder.tokens, self.encoder.token_dim) {
            return Err(Error::InvalidArgument(format!(
                "joint tokens {shape:?} do not match the encoder"
            )));
        }
        Ok(())
    }

    pub fn macs(&self) -> MacCount {
        encoder_macs(&self.encoder) + mlp_head_macs(self.encoder.dim, self.head_hidden, self.classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointParams<P> {
    pub encoder: EncoderParams<P>,
    pub head: MlpHead<P>,
}
param_tree!(JointParams { leaves: [], trees: [encoder, head] });

#[derive(Debug, Clone, PartialEq)]
pub struct JointBaseline<F> {
    pub config: JointConfig,
    pub params: JointParams<Array2<F>>,
}

impl<F: Scalar> JointBaseline<F> {
    pub fn init<R: Rng + ?Sized>(config: JointConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderState::init(config.encoder, rng)?.params;
        let head = MlpHead::init(config.encoder.dim, config.head_hidden, config.classes, INIT_STD, rng);
        Ok(JointBaseline {
            config,
            params: JointParams { encoder, head },
        })
    }

    fn record(&self, tape: &mut Tape<F>, bound: &JointParams<Var>, raw: &RawTokens<F>) -> Var {
        let all: Vec<usize> = (0..raw.len()).collect();
        let z = embed_and_encode_on_tape(tape, raw.tokens.clone(), &all, &bound.encoder, self.config.encoder.heads);
        let cls = tape.gather_rows(vec![(z, 0)]);
        head_on_tape(tape, cls, &bound.head)
    }

    fn raw(&self, sample: &Sample) -> Result<RawTokens<F>> {
        sample_shape_check(sample, self.config.patch_size, self.config.bands)?;
        Ok(self.config.tokenization().apply(sample).cast())
    }

    pub fn classify(&self, sample: &Sample) -> Result<Array1<F>> {
        let raw = self.raw(sample)?;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let logits = self.record(&mut tape, &bound, &raw);
        Ok(tape.value(logits).row(0).to_owned())
    }

    pub fn num_params(&self) -> usize {
        num_scalars(&self.params)
    }
}

impl JointBaseline<f32> {
    pub fn from_pretrained<R: Rng + ?Sized>(config: JointConfig, encoder: &EncoderState<f32>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        check_encoder("joint", &config.encoder, encoder)?;
        let head = MlpHead::init(config.encoder.dim, config.head_hidden, config.classes, INIT_STD, rng);
        Ok(JointBaseline {
            config,
            params: JointParams {
                encoder: encoder.params.clone(),
                head,
            },
        })
    }
}

impl Classifier for JointBaseline<f32> {
    fn patch_size(&self) -> usize {
        self.config.patch_size
    }

    fn bands(&self) -> usize {
        self.config.bands
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn logits(&self, sample: &Sample) -> Result<Array1<f32>> {
        self.classify(sample)
    }
}

impl Trainable for JointBaseline<f32> {
    fn sample_step(&self, sample: &Sample, label: u16) -> Result<(f32, bool, Vec<Array2<f32>>)> {
        if label == 0 || label as usize > self.config.classes {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
        let raw = self.raw(sample)?;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.params);
        let logits = self.record(&mut tape, &bound, &raw);
        let loss = tape.cross_entropy(logits, label as usize - 1);
        let grads = tape.backward(loss, 1.0)?;
        let row = tape.value(logits).row(0).to_owned();
        let correct = argmax_label(row.as_slice().expect("contiguous")) == label;
        let grads = gradients_of(&tape, &grads, &bound);
        Ok((tape.scalar(loss), correct, grads.leaves().into_iter().cloned().collect()))
    }

    fn leaves_mut(&mut self) -> Vec<&mut Array2<f32>> {
        self.params.leaves_mut()
    }
}

/// Where fine-tuning starts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum FinetuneInit {
    #[default]
    Scratch,
    Pretrained {
        spectral: std::path::PathBuf,
        spatial: std::path::PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: StepLr,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self::indian_pines()
    }
}

impl FinetuneConfig {
    fn preset(lr: f64, epochs: usize) -> Self {
        FinetuneConfig {
            epochs,
            batch_size: 32,
            schedule: StepLr::new(lr),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }

    pub fn indian_pines() -> Self {
        Self::preset(3e-4, 80)
    }

    pub fn pavia_university() -> Self {
        Self::preset(1e-2, 80)
    }

    pub fn houston() -> Self {
        Self::preset(2e-3, 40)
    }

    /// Preset by scene name, matched loosely (`indian_pines`, `paviaU`, `houston2013`, ...).
    pub fn for_dataset(name: &str) -> Option<Self> {
        let key: String = name.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        if key.starts_with("indian") || key == "ip" {
            Some(Self::indian_pines())
        } else if key.starts_with("pavia") || key == "pu" || key == "up" {
            Some(Self::pavia_university())
        } else if key.starts_with("houston") {
            Some(Self::houston())
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.schedule.base_lr > 0.0 && self.schedule.gamma > 0.0 && self.schedule.step_size > 0) {
            return Err(Error::InvalidArgument("learning-rate schedule must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

/// Supervised end-to-end training of every parameter on `train` pixels.
pub fn finetune<M: Trainable>(
    model: M,
    cube: &HsiCube,
    train: &[LabeledPixel],
    config: &FinetuneConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(M, Vec<EpochStats>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cube.bands() != model.bands() {
        return Err(Error::Shape(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.bands()
        )));
    }
    let loop_config = LoopConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        schedule: config.schedule,
        adam: config.adam,
        seed: config.seed,
    };
    let mut model = model;
    let mut log = Vec::with_capacity(config.epochs);
    train::run(
        &mut model,
        M::leaves_mut,
        train.len(),
        &loop_config,
        |m, _epoch, i| {
            let item = &train[i];
            let sample = extract_sample(cube, item.pixel, m.patch_size())?;
            let (loss, correct, grads) = m.sample_step(&sample, item.label)?;
            Ok(SampleOutcome {
                loss,
                correct: Some(correct),
                grads,
            })
        },
        |_, summary| {
            let stats = EpochStats {
                epoch: summary.epoch,
                loss: summary.loss,
                accuracy: summary.accuracy.unwrap_or(0.0),
                lr: summary.lr,
            };
            progress(&stats);
            log.push(stats);
            Ok(())
        },
    )?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cross_entropy() {
        let ce = cross_entropy(&[0.0f64; 4], 2).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[0.0f64; 4], 0).is_err());
        assert!(cross_entropy(&[0.0f64; 4], 5).is_err());
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let small = cross_entropy(&[50.0f64, 0.0, 0.0], 1).unwrap();
        assert!(small < 1e-20);
    }

    #[test]
    fn argmax_is_one_based() {
        assert_eq!(argmax_label(&[0.1f32, 0.7, 0.2]), 2);
        assert_eq!(argmax_label(&[1.0f32, 1.0]), 1);
    }

    #[test]
    fn standard_config_widths() {
        let cfg = ModelConfig::standard(7, 200, 16, 1).unwrap();
        assert_eq!(cfg.fused_dim(), 96);
        assert_eq!((cfg.spectral.tokens, cfg.spectral.token_dim), (200, 49));
        assert_eq!((cfg.spatial.tokens, cfg.spatial.token_dim), (49, 200));
    }

    #[test]
    fn joint_sequence_length() {
        let cfg = JointConfig::standard(7, 200, 16, 10).unwrap();
        assert_eq!(cfg.encoder.seq_len(), 981);
        let cfg = JointConfig::standard(1, 200, 16, 200).unwrap();
        assert_eq!(cfg.encoder.seq_len(), 2);
    }

    #[test]
    fn presets() {
        assert_eq!(FinetuneConfig::for_dataset("Indian_Pines").unwrap().schedule.base_lr, 3e-4);
        assert_eq!(FinetuneConfig::for_dataset("PaviaU").unwrap().epochs, 80);
        assert_eq!(FinetuneConfig::for_dataset("houston2013").unwrap().epochs, 40);
    }
}
