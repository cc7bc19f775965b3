//! Checkpoints: a JSON manifest (config, tensor names, shapes and byte
//! offsets, seed, epoch) next to a raw little-endian `f32` payload.
//!
//! The payload lives at the manifest path with `.bin` appended. Tensors are
//! stored in parameter-tree leaf order, row-major.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::encoder::{expected_shapes, EncoderConfig, EncoderState};
use crate::error::{Error, Result};
use crate::model::{FactoFormer, JointBaseline, JointConfig, ModelConfig};
use crate::params::Tree;
use crate::pretrain::{PretrainArch, PretrainModel};
use crate::rng::{self, Purpose};
use crate::tokenizer::TokenMode;

pub const FORMAT: &str = "factoformer-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    /// A bare encoder.
    Encoder,
    /// Encoder plus reconstruction decoder.
    Pretrain,
    /// Both encoders and the fusion head.
    Factoformer,
    /// Joint-token encoder and head.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<TokenMode>,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    /// File name of the payload, relative to the manifest.
    pub payload: String,
    pub payload_bytes: u64,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

/// Provenance recorded alongside the tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    pub seed: u64,
    pub epoch: usize,
    pub dataset: Option<String>,
}

pub fn payload_path(manifest: &Path) -> PathBuf {
    let mut p = manifest.as_os_str().to_owned();
    p.push(".bin");
    PathBuf::from(p)
}

/// Writes any `f32` parameter tree with its config.
pub fn save_tree<T: Tree<Array2<f32>>>(
    path: &Path,
    kind: Kind,
    mode: Option<TokenMode>,
    config: &impl Serialize,
    tree: &T,
    meta: &Meta,
) -> Result<Manifest> {
    let names = tree.names();
    let leaves = tree.leaves();
    let mut payload = Vec::with_capacity(leaves.iter().map(|a| a.len() * 4).sum());
    let mut tensors = Vec::with_capacity(leaves.len());
    for (name, a) in names.into_iter().zip(leaves) {
        tensors.push(TensorEntry {
            name,
            shape: [a.nrows(), a.ncols()],
            offset: payload.len() as u64,
        });
        for v in a.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = payload_path(path);
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind,
        mode,
        config: serde_json::to_value(config)?,
        tensors,
        payload: bin
            .file_name()
            .expect("payload has a file name")
            .to_string_lossy()
            .into_owned(),
        payload_bytes: payload.len() as u64,
        seed: meta.seed,
        epoch: meta.epoch,
        dataset: meta.dataset.clone(),
    };
    std::fs::write(&bin, &payload).map_err(|e| Error::io(&bin, e))?;
    std::fs::write(path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// A loaded manifest with its raw payload.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    payload: Vec<u8>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_slice(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format {} v{}",
                path.display(),
                manifest.format,
                manifest.version
            )));
        }
        let bin = path.parent().unwrap_or(Path::new("")).join(&manifest.payload);
        let payload = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if payload.len() as u64 != manifest.payload_bytes {
            return Err(Error::PayloadSize {
                path: bin,
                expected: manifest.payload_bytes as usize,
                found: payload.len(),
            });
        }
        for t in &manifest.tensors {
            let end = t.offset + (t.shape[0] * t.shape[1] * 4) as u64;
            if end > manifest.payload_bytes {
                return Err(Error::Checkpoint(format!("tensor {} runs past the payload", t.name)));
            }
        }
        Ok(Checkpoint { manifest, payload })
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.manifest.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config does not parse: {e}")))
    }

    pub fn expect_kind(&self, kinds: &[Kind]) -> Result<()> {
        if kinds.contains(&self.manifest.kind) {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "checkpoint holds {:?}, expected one of {kinds:?}",
                self.manifest.kind
            )))
        }
    }

    pub fn tensor(&self, entry: &TensorEntry) -> Array2<f32> {
        let start = entry.offset as usize;
        let n = entry.shape[0] * entry.shape[1];
        let values = self.payload[start..start + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values).expect("shape matches length")
    }

    /// Overwrites every leaf of `tree` with the stored tensor of the same
    /// name (under `prefix`), requiring identical shapes. Stored tensors
    /// outside the prefix are ignored.
    pub fn fill<T: Tree<Array2<f32>>>(&self, prefix: &str, tree: &mut T) -> Result<()> {
        let names = tree.names();
        let mut leaves = tree.leaves_mut();
        for (name, leaf) in names.iter().zip(leaves.iter_mut()) {
            let full = crate::params::join(prefix, name);
            let entry = self
                .manifest
                .tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            if entry.shape != [leaf.nrows(), leaf.ncols()] {
                return Err(Error::Checkpoint(format!(
                    "tensor {full} has shape {:?}, expected {:?}",
                    entry.shape,
                    leaf.dim()
                )));
            }
            **leaf = self.tensor(entry);
        }
        Ok(())
    }
}

pub fn save_encoder(path: &Path, state: &EncoderState<f32>, mode: Option<TokenMode>, meta: &Meta) -> Result<Manifest> {
    save_tree(path, Kind::Encoder, mode, &state.config, &state.params, meta)
}

/// Encoder weights from an encoder or pre-training checkpoint.
pub fn load_encoder(path: &Path) -> Result<(EncoderState<f32>, Manifest)> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.expect_kind(&[Kind::Encoder, Kind::Pretrain])?;
    let (config, prefix): (EncoderConfig, &str) = match ckpt.manifest.kind {
        Kind::Pretrain => (ckpt.config::<PretrainArch>()?.encoder, "encoder"),
        _ => (ckpt.config()?, ""),
    };
    config.validate()?;
    let mut params = expected_shapes(&config).map(|&(r, c)| Array2::<f32>::zeros((r, c)));
    ckpt.fill(prefix, &mut params)?;
    Ok((EncoderState { config, params }, ckpt.manifest))
}

pub fn save_pretrain(path: &Path, model: &PretrainModel<f32>, meta: &Meta) -> Result<Manifest> {
    let mode = Some(model.arch.tokenization.mode());
    save_tree(path, Kind::Pretrain, mode, &model.arch, &model.params, meta)
}

pub fn load_pretrain(path: &Path) -> Result<(PretrainModel<f32>, Manifest)> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.expect_kind(&[Kind::Pretrain])?;
    let arch: PretrainArch = ckpt.config()?;
    let mut model = PretrainModel::init(arch, &mut rng::stream(0, Purpose::Init, 0, 0))?;
    ckpt.fill("", &mut model.params)?;
    Ok((model, ckpt.manifest))
}

pub fn save_model(path: &Path, model: &FactoFormer<f32>, meta: &Meta) -> Result<Manifest> {
    save_tree(path, Kind::Factoformer, None, &model.config, &model.params, meta)
}

pub fn load_model(path: &Path) -> Result<(FactoFormer<f32>, Manifest)> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.expect_kind(&[Kind::Factoformer])?;
    let config: ModelConfig = ckpt.config()?;
    let mut model = FactoFormer::init(config, &mut rng::stream(0, Purpose::Init, 0, 0))?;
    ckpt.fill("", &mut model.params)?;
    Ok((model, ckpt.manifest))
}

pub fn save_joint(path: &Path, model: &JointBaseline<f32>, meta: &Meta) -> Result<Manifest> {
    save_tree(path, Kind::Joint, Some(TokenMode::Joint), &model.config, &model.params, meta)
}

pub fn load_joint(path: &Path) -> Result<(JointBaseline<f32>, Manifest)> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.expect_kind(&[Kind::Joint])?;
    let config: JointConfig = ckpt.config()?;
    let mut model = JointBaseline::init(config, &mut rng::stream(0, Purpose::Init, 0, 0))?;
    ckpt.fill("", &mut model.params)?;
    Ok((model, ckpt.manifest))
}
