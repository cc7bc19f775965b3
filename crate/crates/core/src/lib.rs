//! FactoFormer: factorized spectral/spatial transformers for hyperspectral
//! cube classification, with masked-token self-supervised pre-training.
//!
//! A sample (an `S × S × B` neighborhood of one pixel) is tokenized twice:
//! once per band for the spectral encoder and once per pixel for the spatial
//! encoder. The two classification tokens are concatenated and classified by
//! a small MLP. Each encoder can first be pre-trained by reconstructing
//! randomly masked tokens through a linear head.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod encoder;
mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod rng;
mod scalar;
pub mod tokenizer;
mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
