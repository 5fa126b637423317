//! Chunk encoder: maps one `C x T` chunk to one `E`-dim token.
//!
//! temporal conv `(1, k)` -> spatial conv `(C, 1)` -> ELU -> average pool
//! over time -> pooled steps as a sequence of `F`-dim vectors -> bidirectional
//! pre-norm self-attention blocks -> layer norm -> flatten -> linear to `E`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chunk::ChunkSequence;
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{init, Float, Graph, ParamStore, Tensor, Var};

pub const PREFIX: &str = "encoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub temporal_kernel: usize,
    pub n_filters: usize,
    pub pool_len: usize,
    pub pool_stride: usize,
    pub n_attn_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub token_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            temporal_kernel: 25,
            n_filters: 40,
            pool_len: 75,
            pool_stride: 15,
            n_attn_layers: 6,
            n_heads: 10,
            ff_mult: 4,
            token_dim: 1080,
        }
    }
}

impl EncoderConfig {
    /// Number of pooled time steps for chunks of `t` samples.
    pub fn pooled_len(&self, t: usize) -> usize {
        let conv = t + 1 - self.temporal_kernel;
        (conv - self.pool_len) / self.pool_stride + 1
    }

    pub fn validate(&self, c: usize, t: usize) -> Result<()> {
        let positive = [
            ("temporal_kernel", self.temporal_kernel),
            ("n_filters", self.n_filters),
            ("pool_len", self.pool_len),
            ("pool_stride", self.pool_stride),
            ("n_heads", self.n_heads),
            ("ff_mult", self.ff_mult),
            ("token_dim", self.token_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder.{name} must be positive")));
        }
        if c == 0 {
            return Err(Error::Config("encoder needs at least one channel".into()));
        }
        if self.temporal_kernel >= t {
            return Err(Error::Config(format!(
                "encoder.temporal_kernel {} must be shorter than the {t}-sample chunk",
                self.temporal_kernel
            )));
        }
        if self.pool_len > t + 1 - self.temporal_kernel {
            return Err(Error::Config(format!(
                "encoder.pool_len {} exceeds the {} conv output steps",
                self.pool_len,
                t + 1 - self.temporal_kernel
            )));
        }
        if !self.n_filters.is_multiple_of(self.n_heads) || !self.token_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "encoder.n_heads {} must divide n_filters {} and token_dim {}",
                self.n_heads, self.n_filters, self.token_dim
            )));
        }
        Ok(())
    }
}

/// Adds encoder parameters for `c`-channel, `t`-sample chunks.
pub fn init_params<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    cfg: &EncoderConfig,
    c: usize,
    t: usize,
    rng: &mut R,
) -> Result<()> {
    cfg.validate(c, t)?;
    let (f, k) = (cfg.n_filters, cfg.temporal_kernel);
    store.insert(format!("{PREFIX}.temporal.weight"), init::fan_in_uniform(&[f, 1, 1, k], k, rng));
    store.insert(format!("{PREFIX}.temporal.bias"), init::zeros(&[f]));
    store.insert(format!("{PREFIX}.spatial.weight"), init::fan_in_uniform(&[f, f, c, 1], f * c, rng));
    store.insert(format!("{PREFIX}.spatial.bias"), init::zeros(&[f]));
    for i in 0..cfg.n_attn_layers {
        nn::init_block(store, &format!("{PREFIX}.blocks.{i}"), f, cfg.ff_mult, rng);
    }
    nn::init_layer_norm(store, &format!("{PREFIX}.ln_f"), f);
    nn::init_linear(store, &format!("{PREFIX}.proj"), cfg.pooled_len(t) * f, cfg.token_dim, rng);
    Ok(())
}

/// Encodes a batch `x[B, C, T]` into tokens `[B, E]`.
pub fn encode<T: Float>(g: &mut Graph<T>, store: &ParamStore<T>, cfg: &EncoderConfig, x: Var) -> Result<Var> {
    let [b, c, t] = *g.shape(x) else {
        return Err(Error::dim("encoder input", g.shape(x), &[0, 0, 0]));
    };
    let spatial = g.param(store, &format!("{PREFIX}.spatial.weight"))?;
    let expected_c = g.shape(spatial)[2];
    if c != expected_c || t <= cfg.temporal_kernel {
        return Err(Error::dim("encoder input", &[b, c, t], &[b, expected_c, t]));
    }
    let f = cfg.n_filters;
    let x = g.reshape(x, &[b, 1, c, t])?;
    let kt = g.param(store, &format!("{PREFIX}.temporal.weight"))?;
    let bt = g.param(store, &format!("{PREFIX}.temporal.bias"))?;
    let h = g.conv2d(x, kt, Some(bt), (1, 1))?;
    let bs = g.param(store, &format!("{PREFIX}.spatial.bias"))?;
    let h = g.conv2d(h, spatial, Some(bs), (1, 1))?;
    let h = g.elu(h);
    let w = g.shape(h)[3];
    let h = g.reshape(h, &[b, f, w])?;
    let h = g.avg_pool(h, cfg.pool_len, cfg.pool_stride)?;
    let p = g.shape(h)[2];
    let mut h = g.transpose_last2(h)?;
    for i in 0..cfg.n_attn_layers {
        h = nn::block(g, store, &format!("{PREFIX}.blocks.{i}"), h, None, cfg.n_heads)?;
    }
    let h = nn::layer_norm(g, store, &format!("{PREFIX}.ln_f"), h)?;
    let h = g.reshape(h, &[b, p * f])?;
    nn::linear(g, store, &format!("{PREFIX}.proj"), h)
}

/// Tokens of one chunk sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T> {
    /// `[N, E]`
    pub tokens: Tensor<T>,
    pub pad_mask: Vec<bool>,
}

/// Forward-only encoding of a single `[C, T]` chunk.
pub fn encode_chunk<T: Float>(store: &ParamStore<T>, cfg: &EncoderConfig, chunk: &Tensor<T>) -> Result<Tensor<T>> {
    let s = chunk.shape();
    if s.len() != 2 {
        return Err(Error::dim("encode_chunk", s, &[0, 0]));
    }
    let mut g = Graph::new();
    let x = g.input(chunk.reshape(&[1, s[0], s[1]])?);
    let y = encode(&mut g, store, cfg, x)?;
    g.value(y).reshape(&[cfg.token_dim])
}

/// Forward-only encoding of every chunk of a sequence, in one batch.
pub fn encode_sequence<T: Float>(
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    seq: &ChunkSequence,
) -> Result<TokenSequence<T>> {
    if seq.n_chunks() == 0 {
        return Err(Error::Parameter("empty chunk sequence".into()));
    }
    let mut g = Graph::new();
    let x = g.input(seq.to_tensor());
    let y = encode(&mut g, store, cfg, x)?;
    Ok(TokenSequence {
        tokens: g.value(y).clone(),
        pad_mask: seq.pad_mask.clone(),
    })
}
