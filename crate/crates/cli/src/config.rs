//! Run configuration: a JSON document with defaults for every field.

use std::path::{Path, PathBuf};

use factoformer::data::{data_root, DATA_ROOT_ENV};
use factoformer::encoder::EncoderConfig;
use factoformer::model::{FinetuneConfig, ModelConfig};
use factoformer::optim::{AdamConfig, StepLr};
use factoformer::pretrain::{PretrainArch, PretrainConfig};
use factoformer::tokenizer::{TokenMode, Tokenization};
use serde::{Deserialize, Serialize};

use crate::run::{invalid, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    /// Side `S` of the square neighborhood around each pixel.
    pub patch_size: usize,
    /// Adjacent bands per spectral token.
    pub band_group: usize,
    /// Bands per token of the joint baseline.
    pub joint_k: usize,
    pub mask_ratio: MaskRatios,
    pub encoders: Encoders,
    pub head_hidden: usize,
    /// Lets the pre-training decoder run one attention block over the full sequence.
    pub decoder_sees_sequence: bool,
    pub pretrain: Optimization,
    /// Defaults to the preset of the named dataset.
    pub finetune: Option<Optimization>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            patch_size: 7,
            band_group: 1,
            joint_k: 10,
            mask_ratio: MaskRatios::default(),
            encoders: Encoders::default(),
            head_hidden: factoformer::model::HEAD_HIDDEN,
            decoder_sees_sequence: false,
            pretrain: Optimization::pretrain(),
            finetune: None,
            seed: 0,
            out: PathBuf::from("runs/default"),
        }
    }
}

/// Scene files. Paths left empty are looked up as `<root>/<name>/{cube,labels,split}.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub name: String,
    pub root: Option<PathBuf>,
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "indian_pines".into(),
            root: None,
            cube: None,
            labels: None,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPaths {
    pub cube: PathBuf,
    pub labels: PathBuf,
    /// Absent when no split file exists; every labeled pixel is then a test pixel.
    pub split: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn resolve(&self) -> CliResult<ResolvedPaths> {
        let root = self.root.clone().or_else(data_root);
        let scene_file = |explicit: &Option<PathBuf>, file: &str| -> CliResult<PathBuf> {
            match (explicit, &root) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(root)) => Ok(root.join(&self.name).join(file)),
                (None, None) => Err(invalid(format!(
                    "no location for the {file} of dataset {:?}: set dataset.root, --data-root or {DATA_ROOT_ENV}",
                    self.name
                ))),
            }
        };
        let cube = scene_file(&self.cube, "cube.json")?;
        let labels = scene_file(&self.labels, "labels.json")?;
        let split = match &self.split {
            Some(p) => Some(p.clone()),
            None => root
                .as_ref()
                .map(|r| r.join(&self.name).join("split.json"))
                .filter(|p| p.exists()),
        };
        Ok(ResolvedPaths { cube, labels, split })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskRatios {
    pub spectral: f64,
    pub spatial: f64,
    pub joint: f64,
}

impl Default for MaskRatios {
    fn default() -> Self {
        MaskRatios {
            spectral: 0.7,
            spatial: 0.7,
            joint: 0.7,
        }
    }
}

impl MaskRatios {
    pub fn get(&self, mode: TokenMode) -> f64 {
        match mode {
            TokenMode::Spectral => self.spectral,
            TokenMode::Spatial => self.spatial,
            TokenMode::Joint => self.joint,
        }
    }

    pub fn set(&mut self, mode: TokenMode, ratio: f64) {
        match mode {
            TokenMode::Spectral => self.spectral = ratio,
            TokenMode::Spatial => self.spatial = ratio,
            TokenMode::Joint => self.joint = ratio,
        }
    }
}

/// Encoder hyperparameters; token counts follow from the data and patch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderShape {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_hidden: usize,
}

impl EncoderShape {
    fn of(c: EncoderConfig) -> Self {
        EncoderShape {
            layers: c.layers,
            heads: c.heads,
            dim: c.dim,
            mlp_hidden: c.mlp_hidden,
        }
    }

    pub fn apply(&self, base: EncoderConfig) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            mlp_hidden: self.mlp_hidden,
            ..base
        }
    }

    fn validate(&self, which: &str) -> CliResult<()> {
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return Err(invalid(format!(
                "encoders.{which}.dim ({}) must be a positive multiple of encoders.{which}.heads ({})",
                self.dim, self.heads
            )));
        }
        if self.mlp_hidden == 0 {
            return Err(invalid(format!("encoders.{which}.mlp_hidden must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Encoders {
    pub spectral: EncoderShape,
    pub spatial: EncoderShape,
    pub joint: EncoderShape,
}

impl Default for Encoders {
    fn default() -> Self {
        Encoders {
            spectral: EncoderShape::of(EncoderConfig::spectral(0, 0)),
            spatial: EncoderShape::of(EncoderConfig::spatial(0, 0)),
            joint: EncoderShape::of(EncoderConfig::spatial(0, 0)),
        }
    }
}

impl Encoders {
    pub fn get(&self, mode: TokenMode) -> EncoderShape {
        match mode {
            TokenMode::Spectral => self.spectral,
            TokenMode::Spatial => self.spatial,
            TokenMode::Joint => self.joint,
        }
    }
}

/// Optimizer settings of one training phase. The learning rate is multiplied
/// by `lr_gamma` every `lr_step` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Optimization {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_gamma: f64,
    pub lr_step: usize,
    pub adam: AdamConfig,
}

impl Default for Optimization {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl Optimization {
    pub fn pretrain() -> Self {
        let c = PretrainConfig::default();
        Self::from_parts(c.epochs, c.batch_size, c.schedule, c.adam)
    }

    fn from_parts(epochs: usize, batch_size: usize, s: StepLr, adam: AdamConfig) -> Self {
        Optimization {
            epochs,
            batch_size,
            lr: s.base_lr,
            lr_gamma: s.gamma,
            lr_step: s.step_size,
            adam,
        }
    }

    pub fn schedule(&self) -> StepLr {
        StepLr {
            base_lr: self.lr,
            gamma: self.lr_gamma,
            step_size: self.lr_step,
        }
    }

    fn validate(&self, which: &str, min_epochs: usize) -> CliResult<()> {
        if self.epochs < min_epochs {
            return Err(invalid(format!("{which}.epochs must be at least {min_epochs}")));
        }
        if self.batch_size == 0 {
            return Err(invalid(format!("{which}.batch_size must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("{which}.lr must be positive and finite, got {}", self.lr)));
        }
        if !(self.lr_gamma > 0.0) || self.lr_step == 0 {
            return Err(invalid(format!("{which}.lr_gamma and {which}.lr_step must be positive")));
        }
        Ok(())
    }
}

fn check_ratio(name: &str, r: f64) -> CliResult<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be in the open interval (0, 1), got {r}")))
    }
}

impl RunConfig {
    /// Reads a configuration, or the configuration recorded in a run manifest.
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| invalid(format!("config {} is not valid JSON: {e}", path.display())))?;
        let value = match value.get("config_hash").and(value.get("config")) {
            Some(inner) => inner.clone(),
            None => value,
        };
        serde_json::from_value(value).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    /// Fills fields whose defaults depend on other fields.
    pub fn resolve_defaults(&mut self) {
        if self.finetune.is_none() {
            let f = FinetuneConfig::for_dataset(&self.dataset.name).unwrap_or_default();
            self.finetune = Some(Optimization::from_parts(f.epochs, f.batch_size, f.schedule, f.adam));
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(invalid(format!("patch_size must be odd and positive, got {}", self.patch_size)));
        }
        if self.band_group == 0 {
            return Err(invalid("band_group must be at least 1"));
        }
        if self.joint_k == 0 {
            return Err(invalid("joint_k must be at least 1"));
        }
        if self.head_hidden == 0 {
            return Err(invalid("head_hidden must be positive"));
        }
        check_ratio("mask_ratio.spectral", self.mask_ratio.spectral)?;
        check_ratio("mask_ratio.spatial", self.mask_ratio.spatial)?;
        check_ratio("mask_ratio.joint", self.mask_ratio.joint)?;
        self.encoders.spectral.validate("spectral")?;
        self.encoders.spatial.validate("spatial")?;
        self.encoders.joint.validate("joint")?;
        self.pretrain.validate("pretrain", 1)?;
        if let Some(f) = &self.finetune {
            f.validate("finetune", 0)?;
        }
        Ok(())
    }

    pub fn tokenization(&self, mode: TokenMode) -> Tokenization {
        match mode {
            TokenMode::Spectral => Tokenization::Spectral { group: self.band_group },
            TokenMode::Spatial => Tokenization::Spatial,
            TokenMode::Joint => Tokenization::Joint { k: self.joint_k },
        }
    }

    pub fn pretrain_arch(&self, mode: TokenMode, bands: usize) -> CliResult<PretrainArch> {
        let mut arch = PretrainArch::standard(self.tokenization(mode), self.patch_size, bands)?;
        arch.encoder = self.encoders.get(mode).apply(arch.encoder);
        arch.decoder_sees_sequence = self.decoder_sees_sequence;
        arch.validate()?;
        Ok(arch)
    }

    pub fn pretrain_config(&self, mode: TokenMode) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            schedule: self.pretrain.schedule(),
            adam: self.pretrain.adam,
            mask_ratio: self.mask_ratio.get(mode),
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let f = self.finetune.unwrap_or_else(|| {
            let mut c = self.clone();
            c.resolve_defaults();
            c.finetune.expect("filled by resolve_defaults")
        });
        FinetuneConfig {
            epochs: f.epochs,
            batch_size: f.batch_size,
            schedule: f.schedule(),
            adam: f.adam,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, bands: usize, classes: usize) -> CliResult<ModelConfig> {
        let mut m = ModelConfig::standard(self.patch_size, bands, classes, self.band_group)?;
        m.spectral = self.encoders.spectral.apply(m.spectral);
        m.spatial = self.encoders.spatial.apply(m.spatial);
        m.head_hidden = self.head_hidden;
        m.validate()?;
        Ok(m)
    }
}
