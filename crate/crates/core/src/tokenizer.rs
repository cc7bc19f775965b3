//! Cutting samples into token sequences and embedding them.
//!
//! * spectral: one token per band, the flattened `S × S` slice (optionally
//!   concatenated with neighboring bands);
//! * spatial: one token per pixel, its full spectrum;
//! * joint: one token per pixel and run of `k` consecutive bands.
//!
//! Pixels are always visited row-major.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::{reflect_index, Sample};
use crate::error::{Error, Result};
use crate::params::{param_tree, trunc_normal, Linear, INIT_STD};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    Spectral,
    Spatial,
    Joint,
}

impl std::fmt::Display for TokenMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TokenMode::Spectral => "spectral",
            TokenMode::Spatial => "spatial",
            TokenMode::Joint => "joint",
        })
    }
}

impl std::str::FromStr for TokenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(TokenMode::Spectral),
            "spatial" => Ok(TokenMode::Spatial),
            "joint" => Ok(TokenMode::Joint),
            other => Err(Error::InvalidArgument(format!("unknown token mode {other:?}"))),
        }
    }
}

/// A tokenizer choice with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Tokenization {
    Spectral { group: usize },
    Spatial,
    Joint { k: usize },
}

impl Tokenization {
    pub fn mode(&self) -> TokenMode {
        match self {
            Tokenization::Spectral { .. } => TokenMode::Spectral,
            Tokenization::Spatial => TokenMode::Spatial,
            Tokenization::Joint { .. } => TokenMode::Joint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Tokenization::Spectral { group: 0 } => Err(Error::InvalidArgument("band group must be >= 1".into())),
            Tokenization::Joint { k: 0 } => Err(Error::InvalidArgument("joint group length k must be >= 1".into())),
            _ => Ok(()),
        }
    }

    /// `(token count, token dimension)` for a `size × size × bands` sample.
    pub fn shape(&self, size: usize, bands: usize) -> (usize, usize) {
        match *self {
            Tokenization::Spectral { group } => (bands, group * size * size),
            Tokenization::Spatial => (size * size, bands),
            Tokenization::Joint { k } => (size * size * bands.div_ceil(k), k),
        }
    }

    pub fn apply(&self, sample: &Sample) -> RawTokens<f32> {
        match *self {
            Tokenization::Spectral { group } => tokenize_spectral(sample, group),
            Tokenization::Spatial => tokenize_spatial(sample),
            Tokenization::Joint { k } => tokenize_joint(sample, k),
        }
    }
}

/// Un-embedded tokens, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTokens<F = f32> {
    pub tokens: Array2<F>,
    pub mode: TokenMode,
}

impl<F: Scalar> RawTokens<F> {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn cast<G: Scalar>(&self) -> RawTokens<G> {
        RawTokens {
            tokens: self.tokens.mapv(|x| G::from_f64_lossy(x.as_f64())),
            mode: self.mode,
        }
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Array2<F> {
        self.tokens.select(Axis(0), indices)
    }
}

/// One token per band; with `group > 1` each token also carries the
/// neighboring bands, reflect-padded at both ends of the spectrum.
///
/// `group` must be at least 1.
pub fn tokenize_spectral(sample: &Sample, group: usize) -> RawTokens<f32> {
    assert!(group >= 1, "band group must be >= 1");
    let (s, _, bands) = sample.patch.dim();
    let area = s * s;
    let before = (group as isize - 1) / 2;
    let mut tokens = Array2::zeros((bands, group * area));
    for b in 0..bands {
        let mut row = tokens.row_mut(b);
        for g in 0..group {
            let src = reflect_index(b as isize - before + g as isize, bands);
            for i in 0..s {
                for j in 0..s {
                    row[g * area + i * s + j] = sample.patch[[i, j, src]];
                }
            }
        }
    }
    RawTokens {
        tokens,
        mode: TokenMode::Spectral,
    }
}

/// One token per pixel holding its spectrum.
pub fn tokenize_spatial(sample: &Sample) -> RawTokens<f32> {
    let (s, _, bands) = sample.patch.dim();
    let tokens = sample
        .patch
        .to_shape((s * s, bands))
        .expect("patch is contiguous")
        .to_owned();
    RawTokens {
        tokens,
        mode: TokenMode::Spatial,
    }
}

/// `1 × 1 × k` tokens: pixel-major, then spectral group; the last group is zero-padded.
///
/// `k` must be at least 1.
pub fn tokenize_joint(sample: &Sample, k: usize) -> RawTokens<f32> {
    assert!(k >= 1, "joint group length must be >= 1");
    let (s, _, bands) = sample.patch.dim();
    let groups = bands.div_ceil(k);
    let mut tokens = Array2::zeros((s * s * groups, k));
    for i in 0..s {
        for j in 0..s {
            for g in 0..groups {
                let mut row = tokens.row_mut((i * s + j) * groups + g);
                for t in 0..k {
                    let b = g * k + t;
                    if b < bands {
                        row[t] = sample.patch[[i, j, b]];
                    }
                }
            }
        }
    }
    RawTokens {
        tokens,
        mode: TokenMode::Joint,
    }
}

/// Token projection, positional table and classification token of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams<P> {
    /// `[d × token_dim]` projection with bias.
    pub projection: Linear<P>,
    /// `[N × d]`, one row per patch token; the classification token has none.
    pub pos_embed: P,
    /// `[1 × d]`
    pub cls_token: P,
}
param_tree!(EmbedParams { leaves: [pos_embed, cls_token], trees: [projection] });

impl<F: Scalar> EmbedParams<Array2<F>> {
    pub fn init<R: Rng + ?Sized>(tokens: usize, token_dim: usize, dim: usize, rng: &mut R) -> Self {
        EmbedParams {
            projection: Linear::init(dim, token_dim, INIT_STD, rng),
            pos_embed: trunc_normal(tokens, dim, INIT_STD, rng),
            cls_token: Array2::zeros((1, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.cls_token.ncols()
    }

    pub fn tokens(&self) -> usize {
        self.pos_embed.nrows()
    }

    pub fn token_dim(&self) -> usize {
        self.projection.in_dim()
    }
}

/// Embedded sequence; row 0 is the classification token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<F> {
    pub embeddings: Array2<F>,
}

impl<F: Scalar> TokenSequence<F> {
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }
}

/// `[cls; E·t_i + b + pos_i]` for every token.
pub fn embed<F: Scalar>(raw: &RawTokens<F>, params: &EmbedParams<Array2<F>>) -> Result<TokenSequence<F>> {
    if raw.token_dim() != params.token_dim() || raw.len() != params.tokens() {
        return Err(Error::Shape(format!(
            "tokens {}x{} do not match embedding for {}x{}",
            raw.len(),
            raw.token_dim(),
            params.tokens(),
            params.token_dim()
        )));
    }
    let projected = raw.tokens.dot(&params.projection.weight.t()) + &params.projection.bias + &params.pos_embed;
    let embeddings = ndarray::concatenate(Axis(0), &[params.cls_token.view(), projected.view()])
        .expect("widths agree");
    Ok(TokenSequence { embeddings })
}

/// Records the embedding of the tokens at `positions` (given as rows of
/// `tokens`) on the tape, classification token first.
pub fn embed_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    tokens: Array2<F>,
    positions: &[usize],
    params: &EmbedParams<Var>,
) -> Var {
    debug_assert_eq!(tokens.nrows(), positions.len());
    let x = tape.leaf(tokens);
    let projected = tape.linear(x, &params.projection);
    let pos = tape.gather_rows(positions.iter().map(|&p| (params.pos_embed, p)).collect());
    let patches = tape.add(projected, pos);
    let mut rows = Vec::with_capacity(positions.len() + 1);
    rows.push((params.cls_token, 0));
    rows.extend((0..positions.len()).map(|i| (patches, i)));
    tape.gather_rows(rows)
}
