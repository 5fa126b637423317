//! Causal masking of token sequences, the decoder-only transformer and the
//! causal reconstruction loss.
//!
//! A sequence `H_1..H_N` is duplicated `N - 1` times. Copy `k` (k = 1..N-1,
//! zero-based position of the mask) keeps `H_1..H_k`, holds the learnable
//! mask token at position `k` and zeros after it. The decoder reads its
//! prediction at the mask position and the loss compares it with the
//! original token there.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::TokenSequence;
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{init, AttnMask, Float, Graph, ParamStore, Tensor, Var};

pub const PREFIX: &str = "gpt";
pub const MASK_TOKEN: &str = "gpt.mask_token";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub model_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    /// Length of the learned positional table; must cover the chunk count.
    pub max_positions: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            model_dim: 1024,
            n_layers: 6,
            n_heads: 16,
            ff_mult: 4,
            max_positions: 32,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, n_chunks: usize) -> Result<()> {
        if self.model_dim == 0 || self.n_heads == 0 || self.ff_mult == 0 {
            return Err(Error::Config("decoder.model_dim, n_heads and ff_mult must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "decoder.n_heads {} must divide model_dim {}",
                self.n_heads, self.model_dim
            )));
        }
        if self.max_positions < n_chunks {
            return Err(Error::Config(format!(
                "decoder.max_positions {} is shorter than the {n_chunks}-chunk sequence",
                self.max_positions
            )));
        }
        Ok(())
    }
}

pub fn init_params<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    cfg: &DecoderConfig,
    token_dim: usize,
    rng: &mut R,
) {
    let d = cfg.model_dim;
    store.insert(MASK_TOKEN, init::normal(&[token_dim], 0.02, rng));
    nn::init_linear(store, &format!("{PREFIX}.in_proj"), token_dim, d, rng);
    store.insert(format!("{PREFIX}.pos"), init::normal(&[cfg.max_positions, d], 0.02, rng));
    for i in 0..cfg.n_layers {
        nn::init_block(store, &format!("{PREFIX}.blocks.{i}"), d, cfg.ff_mult, rng);
    }
    nn::init_layer_norm(store, &format!("{PREFIX}.ln_f"), d);
    nn::init_linear(store, &format!("{PREFIX}.out_proj"), d, token_dim, rng);
}

/// Causally masked copies of one or more token sequences, on the tape.
pub struct MaskedVars {
    /// `[K, N, E]`
    pub inputs: Var,
    /// `[K, E]`, the original tokens at the mask positions.
    pub targets: Var,
    /// Mask position of each copy.
    pub mask_pos: Vec<usize>,
    /// Source sequence of each copy.
    pub owner: Vec<usize>,
    /// Attendable keys, `K * N` flags.
    pub keys: Vec<bool>,
}

/// Builds every masked copy from `tokens[B * N, E]` where sequence `b` has
/// `n_real[b]` real tokens followed by padding. Only real positions are
/// masked, so sequence `b` contributes `n_real[b] - 1` copies.
pub fn mask_sequences<T: Float>(
    g: &mut Graph<T>,
    tokens: Var,
    n: usize,
    n_real: &[usize],
    mask_token: Var,
    detach_targets: bool,
) -> Result<MaskedVars> {
    let s = g.shape(tokens).to_vec();
    let b = n_real.len();
    if s.len() != 2 || s[0] != b * n {
        return Err(Error::dim("mask_sequences", &s, &[b * n, 0]));
    }
    if let Some(&bad) = n_real.iter().find(|&&r| r > n) {
        return Err(Error::Parameter(format!("{bad} real tokens in a {n}-token sequence")));
    }
    if n_real.iter().all(|&r| r < 2) {
        return Err(Error::LossUndefined(format!(
            "need at least 2 real tokens, got {:?}",
            n_real
        )));
    }
    let e = s[1];
    let m = g.reshape(mask_token, &[1, e])?;
    let all = g.concat_rows(tokens, m)?;
    let mask_row = b * n;
    let mut index = Vec::new();
    let mut target_rows = Vec::new();
    let (mut mask_pos, mut owner, mut keys) = (Vec::new(), Vec::new(), Vec::new());
    for (seq, &real) in n_real.iter().enumerate() {
        for k in 1..real {
            for j in 0..n {
                index.push(match j.cmp(&k) {
                    std::cmp::Ordering::Less => Some(seq * n + j),
                    std::cmp::Ordering::Equal => Some(mask_row),
                    std::cmp::Ordering::Greater => None,
                });
                keys.push(j <= k);
            }
            target_rows.push(Some(seq * n + k));
            mask_pos.push(k);
            owner.push(seq);
        }
    }
    let copies = mask_pos.len();
    let inputs = g.gather_rows(all, index)?;
    let inputs = g.reshape(inputs, &[copies, n, e])?;
    let source = if detach_targets { g.detach(tokens) } else { tokens };
    let targets = g.gather_rows(source, target_rows)?;
    Ok(MaskedVars {
        inputs,
        targets,
        mask_pos,
        owner,
        keys,
    })
}

/// Decoder states `[K, N, D]` for inputs `[K, N, E]`. Query `i` attends to
/// keys `j <= i` whose flag in `keys` is set.
pub fn hidden<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &DecoderConfig,
    x: Var,
    keys: &[bool],
) -> Result<Var> {
    let [k, n, _] = *g.shape(x) else {
        return Err(Error::dim("decoder input", g.shape(x), &[0, 0, 0]));
    };
    if n > cfg.max_positions {
        return Err(Error::dim("decoder positions", &[n], &[cfg.max_positions]));
    }
    if keys.len() != k * n {
        return Err(Error::dim("decoder keys", &[keys.len()], &[k * n]));
    }
    let h = nn::linear(g, store, &format!("{PREFIX}.in_proj"), x)?;
    let pos = g.param(store, &format!("{PREFIX}.pos"))?;
    let pos = g.gather_rows(pos, (0..n).map(Some).collect())?;
    let mut h = g.add_broadcast(h, pos)?;
    let mask = AttnMask::causal_with_keys(n, keys);
    for i in 0..cfg.n_layers {
        h = nn::block(g, store, &format!("{PREFIX}.blocks.{i}"), h, Some(&mask), cfg.n_heads)?;
    }
    nn::layer_norm(g, store, &format!("{PREFIX}.ln_f"), h)
}

/// Picks row `read[s]` of sequence `s` from `h[K, N, D]`, giving `[K, D]`.
pub fn read_out<T: Float>(g: &mut Graph<T>, h: Var, read: &[usize]) -> Result<Var> {
    let [k, n, d] = *g.shape(h) else {
        return Err(Error::dim("read_out", g.shape(h), &[0, 0, 0]));
    };
    if read.len() != k || read.iter().any(|&r| r >= n) {
        return Err(Error::dim("read_out", &[k, n, d], &[read.len()]));
    }
    let flat = g.reshape(h, &[k * n, d])?;
    g.gather_rows(flat, read.iter().enumerate().map(|(s, &r)| Some(s * n + r)).collect())
}

/// Predictions `[K, E]` read at each copy's mask position.
pub fn decode<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &DecoderConfig,
    masked: &MaskedVars,
) -> Result<Var> {
    let h = hidden(g, store, cfg, masked.inputs, &masked.keys)?;
    let at_mask = read_out(g, h, &masked.mask_pos)?;
    nn::linear(g, store, &format!("{PREFIX}.out_proj"), at_mask)
}

/// Per-copy loss weights: each source sequence's squared errors are averaged
/// over its own copies, then sequences are averaged.
pub fn loss_weights(owner: &[usize]) -> Vec<f64> {
    let n_seq = owner.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_seq];
    for &o in owner {
        counts[o] += 1;
    }
    let used = counts.iter().filter(|&&c| c > 0).count() as f64;
    owner.iter().map(|&o| 1.0 / (used * counts[o] as f64)).collect()
}

/// Causal reconstruction loss on the tape.
pub fn reconstruction_loss<T: Float>(g: &mut Graph<T>, pred: Var, masked: &MaskedVars) -> Result<Var> {
    g.weighted_sq_error(pred, masked.targets, &loss_weights(&masked.owner))
}

/// Plain-tensor form of the masked batch of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch<T> {
    /// `[N - 1, N, E]` for a fully real sequence.
    pub sequences: Tensor<T>,
    /// Per copy, per position: attendable.
    pub attn_mask: Vec<Vec<bool>>,
    /// `[N - 1, E]`
    pub targets: Tensor<T>,
    pub mask_pos: Vec<usize>,
}

fn n_real(pad_mask: &[bool]) -> Result<usize> {
    let n = pad_mask.iter().take_while(|&&m| m).count();
    if pad_mask[n..].iter().any(|&m| m) {
        return Err(Error::Parameter("padding must be a suffix of the sequence".into()));
    }
    Ok(n)
}

pub fn build_masked_batch<T: Float>(tokens: &TokenSequence<T>, mask_token: &Tensor<T>) -> Result<MaskedBatch<T>> {
    let [n, e] = *tokens.tokens.shape() else {
        return Err(Error::dim("build_masked_batch", tokens.tokens.shape(), &[0, 0]));
    };
    if mask_token.shape() != [e] {
        return Err(Error::dim("build_masked_batch", mask_token.shape(), &[e]));
    }
    if tokens.pad_mask.len() != n {
        return Err(Error::dim("build_masked_batch", &[tokens.pad_mask.len()], &[n]));
    }
    let real = n_real(&tokens.pad_mask)?;
    let mut g = Graph::new();
    let t = g.input(tokens.tokens.clone());
    let m = g.input(mask_token.clone());
    let mv = mask_sequences(&mut g, t, n, &[real], m, false)?;
    Ok(MaskedBatch {
        sequences: g.value(mv.inputs).clone(),
        attn_mask: mv.keys.chunks(n).map(<[bool]>::to_vec).collect(),
        targets: g.value(mv.targets).clone(),
        mask_pos: mv.mask_pos,
    })
}

/// Input projection `E -> D` applied per token, `[N, E] -> [N, D]`.
pub fn project_tokens<T: Float>(store: &ParamStore<T>, tokens: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(tokens.clone());
    let y = nn::linear(&mut g, store, &format!("{PREFIX}.in_proj"), x)?;
    Ok(g.value(y).clone())
}

/// Forward-only predictions `[K, E]` for a masked batch.
pub fn decode_batch<T: Float>(store: &ParamStore<T>, cfg: &DecoderConfig, batch: &MaskedBatch<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let inputs = g.input(batch.sequences.clone());
    let targets = g.input(batch.targets.clone());
    let masked = MaskedVars {
        inputs,
        targets,
        mask_pos: batch.mask_pos.clone(),
        owner: vec![0; batch.mask_pos.len()],
        keys: batch.attn_mask.concat(),
    };
    let y = decode(&mut g, store, cfg, &masked)?;
    Ok(g.value(y).clone())
}

/// `(1 / K) * sum_k ||pred_k - target_k||^2` over the `K = N - 1` masked
/// positions.
pub fn causal_reconstruction_loss<T: Float>(pred: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    if pred.shape() != targets.shape() || pred.ndim() != 2 {
        return Err(Error::dim("causal_reconstruction_loss", pred.shape(), targets.shape()));
    }
    let k = pred.shape()[0];
    if k == 0 {
        return Err(Error::LossUndefined("no masked positions".into()));
    }
    let mut g = Graph::new();
    let p = g.input(pred.clone());
    let t = g.input(targets.clone());
    let l = g.weighted_sq_error(p, t, &vec![1.0 / k as f64; k])?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_average_within_then_across_sequences() {
        let w = loss_weights(&[0, 0, 0, 1]);
        assert_eq!(w, vec![1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5]);
        let single = loss_weights(&[0; 4]);
        assert!(single.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn one_token_is_loss_undefined() {
        let toks = TokenSequence {
            tokens: Tensor::<f64>::zeros(&[1, 3]),
            pad_mask: vec![true],
        };
        assert!(matches!(
            build_masked_batch(&toks, &Tensor::zeros(&[3])),
            Err(Error::LossUndefined(_))
        ));
    }
}
