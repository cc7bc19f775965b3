//! Closed-form parameter and multiply-add counts.

use super::EncoderConfig;

fn linear(out_dim: usize, in_dim: usize) -> usize {
    out_dim * in_dim + out_dim
}

/// Learnable scalars in one encoder block.
pub fn block_params(dim: usize, mlp_hidden: usize) -> usize {
    let attention = 4 * linear(dim, dim);
    let norms = 2 * 2 * dim;
    let mlp = linear(mlp_hidden, dim) + linear(dim, mlp_hidden);
    attention + norms + mlp
}

/// Embedding, positional table, classification token, blocks and final
/// normalization (present when there is at least one block); with `with_decoder`, also the mask token and the linear
/// reconstruction head.
pub fn count_params(config: &EncoderConfig, with_decoder: bool) -> usize {
    let d = config.dim;
    let embed = linear(d, config.token_dim) + config.tokens * d + d;
    let blocks = config.layers * block_params(d, config.mlp_hidden);
    let final_ln = if config.layers > 0 { 2 * d } else { 0 };
    let decoder = if with_decoder {
        d + linear(config.token_dim, d)
    } else {
        0
    };
    embed + blocks + final_ln + decoder
}

/// Token pairs scored per attention layer: `(m + n)²` jointly versus `m² + n²` factorized.
pub fn attention_cost(m: u64, n: u64) -> (u64, u64) {
    ((m + n) * (m + n), m * m + n * n)
}

/// Multiply-add counts of one forward pass over a full sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct MacCount {
    pub embedding: u64,
    /// Query, key, value and output projections.
    pub projections: u64,
    pub mlp: u64,
    /// `Q·Kᵀ` and `weights·V` products.
    pub attention: u64,
    pub head: u64,
}

impl MacCount {
    /// Multiply-adds in layers that carry weights (the convention of
    /// module-hook profilers, which do not see bare matrix products).
    pub fn dense(&self) -> u64 {
        self.embedding + self.projections + self.mlp + self.head
    }

    pub fn total(&self) -> u64 {
        self.dense() + self.attention
    }
}

impl std::ops::Add for MacCount {
    type Output = MacCount;

    fn add(self, o: MacCount) -> MacCount {
        MacCount {
            embedding: self.embedding + o.embedding,
            projections: self.projections + o.projections,
            mlp: self.mlp + o.mlp,
            attention: self.attention + o.attention,
            head: self.head + o.head,
        }
    }
}

pub fn encoder_macs(config: &EncoderConfig) -> MacCount {
    let (n, t, d, m, l) = (
        config.tokens as u64,
        config.seq_len() as u64,
        config.dim as u64,
        config.mlp_hidden as u64,
        config.layers as u64,
    );
    MacCount {
        embedding: n * config.token_dim as u64 * d,
        projections: l * 4 * t * d * d,
        mlp: l * 2 * t * d * m,
        attention: l * 2 * t * t * d,
        head: 0,
    }
}

/// Multiply-adds of an MLP `in → hidden → out` applied to one vector.
pub fn mlp_head_macs(in_dim: usize, hidden: usize, out_dim: usize) -> MacCount {
    MacCount {
        head: (in_dim * hidden + hidden * out_dim) as u64,
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_layers_is_embedding_only() {
        let cfg = EncoderConfig {
            layers: 0,
            heads: 1,
            dim: 4,
            mlp_hidden: 2,
            tokens: 3,
            token_dim: 5,
        };
        // projection 4*5+4, positions 3*4, cls 4
        assert_eq!(count_params(&cfg, false), 24 + 12 + 4);
    }

    #[test]
    fn token_pair_counts() {
        assert_eq!(attention_cost(200, 49), (62_001, 42_401));
        assert_eq!(attention_cost(0, 49), (2401, 2401));
    }
}
