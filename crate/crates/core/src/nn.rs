//! Layers shared by the encoder, the decoder and the classification head.
//! Parameters live in a [`ParamStore`] under `prefix.name` paths.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{init, AttnMask, Float, Graph, ParamStore, Var};

pub fn init_linear<T: Float, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) {
    store.insert(format!("{prefix}.weight"), init::fan_in_uniform(&[d_in, d_out], d_in, rng));
    store.insert(format!("{prefix}.bias"), init::zeros(&[d_out]));
}

pub fn linear<T: Float>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    g.linear(x, w, Some(b))
}

pub fn init_layer_norm<T: Float>(store: &mut ParamStore<T>, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gamma"), init::ones(&[d]));
    store.insert(format!("{prefix}.beta"), init::zeros(&[d]));
}

pub fn layer_norm<T: Float>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let beta = g.param(store, &format!("{prefix}.beta"))?;
    g.layer_norm(x, gamma, beta)
}

/// Pre-norm transformer block parameters for width `d`.
pub fn init_block<T: Float, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, d: usize, ff_mult: usize, rng: &mut R) {
    init_layer_norm(store, &format!("{prefix}.ln1"), d);
    for name in ["wq", "wk", "wv", "wo"] {
        init_linear(store, &format!("{prefix}.attn.{name}"), d, d, rng);
    }
    init_layer_norm(store, &format!("{prefix}.ln2"), d);
    init_linear(store, &format!("{prefix}.ff.w1"), d, ff_mult * d, rng);
    init_linear(store, &format!("{prefix}.ff.w2"), ff_mult * d, d, rng);
}

/// `x + attn(ln1(x))`, then `+ ff(ln2(.))` with a GELU feed-forward.
/// `x` is `[n, d]` or `[batch, n, d]`.
pub fn block<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    mask: Option<&AttnMask>,
    heads: usize,
) -> Result<Var> {
    let h = layer_norm(g, store, &format!("{prefix}.ln1"), x)?;
    let q = linear(g, store, &format!("{prefix}.attn.wq"), h)?;
    let k = linear(g, store, &format!("{prefix}.attn.wk"), h)?;
    let v = linear(g, store, &format!("{prefix}.attn.wv"), h)?;
    let a = g.attention(q, k, v, mask, heads)?;
    let a = linear(g, store, &format!("{prefix}.attn.wo"), a)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, store, &format!("{prefix}.ln2"), x)?;
    let h = linear(g, store, &format!("{prefix}.ff.w1"), h)?;
    let h = g.gelu(h);
    let h = linear(g, store, &format!("{prefix}.ff.w2"), h)?;
    g.add(x, h)
}
