//! The transformer encoder: multi-head self-attention, layer normalization,
//! GELU MLP, pre-norm residual blocks and the `L`-layer stack.

pub mod cost;

pub use cost::{attention_cost, block_params, count_params, encoder_macs, MacCount};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{bind, gradients_of, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{param_tree, LayerNorm, Linear, Tree, INIT_STD};
use crate::tokenizer::{embed_on_tape, EmbedParams, TokenSequence};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    /// Embedding width `d`.
    pub dim: usize,
    /// Absolute hidden width of the block MLP.
    pub mlp_hidden: usize,
    /// Patch tokens `N`; the sequence length is `N + 1`.
    pub tokens: usize,
    pub token_dim: usize,
}

impl EncoderConfig {
    /// Spectral transformer: 5 layers, width 32, MLP 4, 4 heads.
    pub fn spectral(tokens: usize, token_dim: usize) -> Self {
        EncoderConfig {
            layers: 5,
            heads: 4,
            dim: 32,
            mlp_hidden: 4,
            tokens,
            token_dim,
        }
    }

    /// Spatial transformer: 5 layers, width 64, MLP 8, 4 heads.
    pub fn spatial(tokens: usize, token_dim: usize) -> Self {
        EncoderConfig {
            layers: 5,
            heads: 4,
            dim: 64,
            mlp_hidden: 8,
            tokens,
            token_dim,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.tokens + 1
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding width {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.mlp_hidden == 0 || self.tokens == 0 || self.token_dim == 0 {
            return Err(Error::InvalidArgument(
                "mlp_hidden, tokens and token_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One pre-norm block: `x + MHA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<P> {
    pub ln1: LayerNorm<P>,
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
    /// Output projection applied to the concatenated heads.
    pub out: Linear<P>,
    pub ln2: LayerNorm<P>,
    pub fc1: Linear<P>,
    pub fc2: Linear<P>,
}
param_tree!(Block { leaves: [], trees: [ln1, query, key, value, out, ln2, fc1, fc2] });

impl<F: Scalar> Block<Array2<F>> {
    pub fn init<R: Rng + ?Sized>(dim: usize, mlp_hidden: usize, std: f64, rng: &mut R) -> Self {
        Block {
            ln1: LayerNorm::new(dim),
            query: Linear::init(dim, dim, std, rng),
            key: Linear::init(dim, dim, std, rng),
            value: Linear::init(dim, dim, std, rng),
            out: Linear::init(dim, dim, std, rng),
            ln2: LayerNorm::new(dim),
            fc1: Linear::init(mlp_hidden, dim, std, rng),
            fc2: Linear::init(dim, mlp_hidden, std, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.in_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<P> {
    pub embed: EmbedParams<P>,
    pub blocks: Vec<Block<P>>,
    /// Absent for a zero-layer encoder, which passes its input through.
    pub final_ln: Option<LayerNorm<P>>,
}
param_tree!(EncoderParams { leaves: [], trees: [embed, blocks, final_ln] });

/// Gradients share the parameter tree's shape.
pub type Gradients<F> = EncoderParams<Array2<F>>;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState<F> {
    pub config: EncoderConfig,
    pub params: EncoderParams<Array2<F>>,
}

impl<F: Scalar> EncoderState<F> {
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        Self::init_with_std(config, INIT_STD, rng)
    }

    pub fn init_with_std<R: Rng + ?Sized>(config: EncoderConfig, std: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut embed = EmbedParams::init(config.tokens, config.token_dim, config.dim, rng);
        if std != INIT_STD {
            embed.projection = Linear::init(config.dim, config.token_dim, std, rng);
            embed.pos_embed = crate::params::trunc_normal(config.tokens, config.dim, std, rng);
        }
        let blocks = (0..config.layers)
            .map(|_| Block::init(config.dim, config.mlp_hidden, std, rng))
            .collect();
        Ok(EncoderState {
            config,
            params: EncoderParams {
                embed,
                blocks,
                final_ln: (config.layers > 0).then(|| LayerNorm::new(config.dim)),
            },
        })
    }

    /// Checks that every leaf has the shape the config implies.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = expected_shapes(&self.config);
        let actual = self.params.map(|a| a.dim());
        if expected.leaves() != actual.leaves() {
            return Err(Error::Shape("encoder parameters do not match their config".into()));
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> EncoderState<G> {
        EncoderState {
            config: self.config,
            params: crate::params::cast(&self.params),
        }
    }
}

fn linear_shape(out_dim: usize, in_dim: usize) -> Linear<(usize, usize)> {
    Linear {
        weight: (out_dim, in_dim),
        bias: (1, out_dim),
    }
}

fn norm_shape(dim: usize) -> LayerNorm<(usize, usize)> {
    LayerNorm {
        gain: (1, dim),
        bias: (1, dim),
    }
}

pub fn expected_shapes(config: &EncoderConfig) -> EncoderParams<(usize, usize)> {
    let d = config.dim;
    EncoderParams {
        embed: EmbedParams {
            projection: linear_shape(d, config.token_dim),
            pos_embed: (config.tokens, d),
            cls_token: (1, d),
        },
        blocks: (0..config.layers)
            .map(|_| Block {
                ln1: norm_shape(d),
                query: linear_shape(d, d),
                key: linear_shape(d, d),
                value: linear_shape(d, d),
                out: linear_shape(d, d),
                ln2: norm_shape(d),
                fc1: linear_shape(config.mlp_hidden, d),
                fc2: linear_shape(d, config.mlp_hidden),
            })
            .collect(),
        final_ln: (config.layers > 0).then(|| norm_shape(d)),
    }
}

/// `softmax(Q·Kᵀ / √d_k)·V` on the tape.
pub fn attention_on_tape<F: Scalar>(tape: &mut Tape<F>, q: Var, k: Var, v: Var) -> Var {
    let dk = tape.value(q).ncols();
    let scores = tape.matmul_t(q, k);
    let scaled = tape.scale(scores, F::one() / F::from_usize(dk).unwrap().sqrt());
    let weights = tape.softmax_rows(scaled);
    tape.matmul(weights, v)
}

/// Concatenated heads projected by the block's output map (no residual).
pub fn multi_head_on_tape<F: Scalar>(tape: &mut Tape<F>, x: Var, block: &Block<Var>, heads: usize) -> Var {
    let q = tape.linear(x, &block.query);
    let k = tape.linear(x, &block.key);
    let v = tape.linear(x, &block.value);
    let dim = tape.value(q).ncols();
    let dk = dim / heads;
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * dk, dk);
            let kh = tape.slice_cols(k, h * dk, dk);
            let vh = tape.slice_cols(v, h * dk, dk);
            attention_on_tape(tape, qh, kh, vh)
        })
        .collect();
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    tape.linear(cat, &block.out)
}

pub fn block_on_tape<F: Scalar>(tape: &mut Tape<F>, x: Var, block: &Block<Var>, heads: usize) -> Var {
    let h = tape.layer_norm(x, block.ln1.gain, block.ln1.bias);
    let attn = multi_head_on_tape(tape, h, block, heads);
    let x1 = tape.add(x, attn);
    let h = tape.layer_norm(x1, block.ln2.gain, block.ln2.bias);
    let h = tape.linear(h, &block.fc1);
    let h = tape.gelu(h);
    let h = tape.linear(h, &block.fc2);
    tape.add(x1, h)
}

/// All blocks, then the final layer normalization (none when there are no blocks).
pub fn encode_on_tape<F: Scalar>(tape: &mut Tape<F>, seq: Var, params: &EncoderParams<Var>, heads: usize) -> Var {
    let mut x = seq;
    for block in &params.blocks {
        x = block_on_tape(tape, x, block, heads);
    }
    match &params.final_ln {
        Some(ln) => tape.layer_norm(x, ln.gain, ln.bias),
        None => x,
    }
}

/// Embeds the tokens at `positions` and runs the encoder; returns the encoded
/// `[1 + positions.len() × d]` sequence.
pub fn embed_and_encode_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    tokens: Array2<F>,
    positions: &[usize],
    params: &EncoderParams<Var>,
    heads: usize,
) -> Var {
    let seq = embed_on_tape(tape, tokens, positions, &params.embed);
    encode_on_tape(tape, seq, params, heads)
}

fn check_finite<F: Scalar>(name: &str, a: &Array2<F>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} contains non-finite values")))
    }
}

/// Single attention head over `[T × d_k]` queries, keys and values.
pub fn attention_head<F: Scalar>(q: &Array2<F>, k: &Array2<F>, v: &Array2<F>) -> Result<Array2<F>> {
    if q.dim() != k.dim() || k.nrows() != v.nrows() || q.ncols() == 0 {
        return Err(Error::Shape(format!(
            "attention inputs q{:?} k{:?} v{:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    check_finite("query", q)?;
    check_finite("key", k)?;
    check_finite("value", v)?;
    let mut tape = Tape::new();
    let (q, k, v) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let out = attention_on_tape(&mut tape, q, k, v);
    Ok(tape.value(out).clone())
}

fn check_block_input<F: Scalar>(x: &Array2<F>, block: &Block<Array2<F>>, heads: usize) -> Result<()> {
    if heads == 0 || block.dim() % heads != 0 {
        return Err(Error::Shape(format!("width {} not divisible by {heads} heads", block.dim())));
    }
    if x.ncols() != block.dim() {
        return Err(Error::Shape(format!("input width {} != block width {}", x.ncols(), block.dim())));
    }
    Ok(())
}

/// Multi-head self-attention of one block (no normalization, no residual).
pub fn multi_head<F: Scalar>(x: &Array2<F>, block: &Block<Array2<F>>, heads: usize) -> Result<Array2<F>> {
    check_block_input(x, block, heads)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let bound = bind(&mut tape, block);
    let out = multi_head_on_tape(&mut tape, xv, &bound, heads);
    Ok(tape.value(out).clone())
}

pub fn encoder_block<F: Scalar>(x: &Array2<F>, block: &Block<Array2<F>>, heads: usize) -> Result<Array2<F>> {
    check_block_input(x, block, heads)?;
    check_finite("block input", x)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let bound = bind(&mut tape, block);
    let out = block_on_tape(&mut tape, xv, &bound, heads);
    Ok(tape.value(out).clone())
}

/// A recorded encoder forward pass, ready for [`EncoderRecording::backward`].
pub struct EncoderRecording<F> {
    pub tape: Tape<F>,
    pub input: Var,
    pub output: Var,
    bound: EncoderParams<Var>,
}

impl<F: Scalar> EncoderRecording<F> {
    pub fn output(&self) -> &Array2<F> {
        self.tape.value(self.output)
    }

    /// Gradients of `⟨seed, output⟩` for every encoder parameter and the input sequence.
    pub fn backward(&self, seed: Array2<F>) -> Result<(Gradients<F>, Array2<F>)> {
        let grads = self.tape.backward_seeded(self.output, seed)?;
        Ok((gradients_of(&self.tape, &grads, &self.bound), grads.of(&self.tape, self.input)))
    }
}

impl<F: Scalar> EncoderState<F> {
    /// Blocks plus final normalization over an already embedded sequence.
    pub fn encode(&self, seq: &TokenSequence<F>) -> Result<Array2<F>> {
        Ok(self.record(seq)?.output().clone())
    }

    pub fn record(&self, seq: &TokenSequence<F>) -> Result<EncoderRecording<F>> {
        if seq.embeddings.dim() != (self.config.seq_len(), self.config.dim) {
            return Err(Error::Shape(format!(
                "sequence {:?} does not match encoder ({}, {})",
                seq.embeddings.dim(),
                self.config.seq_len(),
                self.config.dim
            )));
        }
        let mut tape = Tape::new();
        let input = tape.leaf(seq.embeddings.clone());
        let bound = bind(&mut tape, &self.params);
        let output = encode_on_tape(&mut tape, input, &bound, self.config.heads);
        Ok(EncoderRecording {
            tape,
            input,
            output,
            bound,
        })
    }
}

pub fn encode<F: Scalar>(seq: &TokenSequence<F>, state: &EncoderState<F>) -> Result<Array2<F>> {
    state.encode(seq)
}
