//! Whole-model assembly: architecture config, parameter initialization, the
//! pre-training objective and the classifier for each fine-tuning strategy.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunk::ChunkConfig;
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::gpt::{self, DecoderConfig, MaskedVars};
use crate::nn;
use crate::tensor::{Float, Graph, ParamStore, Var};

pub const HEAD_PREFIX: &str = "head";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    pub n_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 64],
            n_classes: 4,
        }
    }
}

/// Everything that fixes parameter shapes. Checkpoints carry its
/// fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub n_channels: usize,
    pub chunk: ChunkConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub head: HeadConfig,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            n_channels: 22,
            chunk: ChunkConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl ArchConfig {
    /// Small geometry that trains in seconds on one core: 4 channels,
    /// 8 chunks of 0.2 s, 32-dim tokens, a 2-layer 32-wide decoder.
    pub fn desk() -> Self {
        Self {
            n_channels: 4,
            chunk: ChunkConfig {
                n_chunks: 8,
                chunk_len_s: 0.2,
                overlap_ratio: 0.1,
                sample_rate_hz: 250.0,
            },
            encoder: EncoderConfig {
                temporal_kernel: 7,
                n_filters: 8,
                pool_len: 8,
                pool_stride: 4,
                n_attn_layers: 2,
                n_heads: 2,
                ff_mult: 4,
                token_dim: 32,
            },
            decoder: DecoderConfig {
                model_dim: 32,
                n_layers: 2,
                n_heads: 4,
                ff_mult: 4,
                max_positions: 8,
            },
            head: HeadConfig {
                hidden: vec![64, 32],
                n_classes: 4,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.chunk.validate()?;
        self.encoder.validate(self.n_channels, self.chunk.chunk_len_samples())?;
        self.decoder.validate(self.chunk.n_chunks)?;
        if self.head.n_classes < 2 || self.head.hidden.contains(&0) {
            return Err(Error::Config("head needs >= 2 classes and positive widths".into()));
        }
        Ok(())
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk.chunk_len_samples()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("architecture config serializes")
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    /// Encoder and decoder parameters drawn from `seed`.
    pub fn init_params<T: Float>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        encoder::init_params(&mut store, &self.encoder, self.n_channels, self.chunk_len(), &mut rng)?;
        gpt::init_params(&mut store, &self.decoder, self.encoder.token_dim, &mut rng);
        Ok(store)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pre-training objective for a batch of chunk sequences.
pub struct PretrainForward {
    pub loss: Var,
    /// `[B * N, E]`
    pub tokens: Var,
    pub masked: MaskedVars,
    pub pred: Var,
}

/// `chunks` is `[B * N, C, T]`; sequence `b` has `n_real[b]` real chunks.
pub fn pretrain_forward<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    arch: &ArchConfig,
    chunks: Var,
    n_real: &[usize],
    detach_targets: bool,
) -> Result<PretrainForward> {
    let n = arch.chunk.n_chunks;
    let tokens = encoder::encode(g, store, &arch.encoder, chunks)?;
    let mask = g.param(store, gpt::MASK_TOKEN)?;
    let masked = gpt::mask_sequences(g, tokens, n, n_real, mask, detach_targets)?;
    let pred = gpt::decode(g, store, &arch.decoder, &masked)?;
    let loss = gpt::reconstruction_loss(g, pred, &masked)?;
    Ok(PretrainForward {
        loss,
        tokens,
        masked,
        pred,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    EncoderOnly,
    EncoderGpt,
    Linear,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::EncoderOnly, Strategy::EncoderGpt, Strategy::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::EncoderOnly => "encoder_only",
            Strategy::EncoderGpt => "encoder_gpt",
            Strategy::Linear => "linear",
        }
    }

    pub fn uses_decoder(self) -> bool {
        self == Strategy::EncoderGpt
    }

    /// Chunk layout of one trial of `trial_samples` samples: the pre-training
    /// layout for the decoder strategy, otherwise as many non-overlapping
    /// chunks as fit.
    pub fn trial_chunks(self, arch: &ArchConfig, trial_samples: usize) -> Result<ChunkConfig> {
        if self.uses_decoder() {
            return Ok(arch.chunk.clone());
        }
        let n = trial_samples / arch.chunk_len();
        if n == 0 {
            return Err(Error::Config(format!(
                "{trial_samples}-sample trials are shorter than one {}-sample chunk",
                arch.chunk_len()
            )));
        }
        Ok(ChunkConfig {
            n_chunks: n,
            overlap_ratio: 0.0,
            ..arch.chunk.clone()
        })
    }

    pub fn head_input_dim(self, arch: &ArchConfig, trial_samples: usize) -> Result<usize> {
        Ok(if self.uses_decoder() {
            arch.decoder.model_dim
        } else {
            self.trial_chunks(arch, trial_samples)?.n_chunks * arch.encoder.token_dim
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}` (encoder_only, encoder_gpt, linear)")))
    }
}

/// Turns pre-trained parameters into a classifier: drops what the strategy
/// does not use, adds a fresh head and sets trainable flags.
pub fn build_classifier<T: Float>(
    pretrained: &ParamStore<T>,
    arch: &ArchConfig,
    strategy: Strategy,
    trial_samples: usize,
    seed: u64,
) -> Result<ParamStore<T>> {
    let mut store = pretrained.clone();
    store.remove_prefix(&format!("{HEAD_PREFIX}."));
    if strategy.uses_decoder() {
        // no masking during fine-tuning
        store.remove_prefix(gpt::MASK_TOKEN);
        store.remove_prefix(&format!("{}.out_proj", gpt::PREFIX));
    } else {
        store.remove_prefix(&format!("{}.", gpt::PREFIX));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut width = strategy.head_input_dim(arch, trial_samples)?;
    let widths: Vec<usize> = arch.head.hidden.iter().copied().chain([arch.head.n_classes]).collect();
    for (i, &w) in widths.iter().enumerate() {
        nn::init_linear(&mut store, &format!("{HEAD_PREFIX}.l{i}"), width, w, &mut rng);
        width = w;
    }
    store.set_trainable("", true);
    if strategy == Strategy::Linear {
        store.set_trainable(&format!("{}.", encoder::PREFIX), false);
    }
    Ok(store)
}

fn head<T: Float>(g: &mut Graph<T>, store: &ParamStore<T>, arch: &ArchConfig, x: Var) -> Result<Var> {
    let layers = arch.head.hidden.len() + 1;
    let mut h = x;
    for i in 0..layers {
        h = nn::linear(g, store, &format!("{HEAD_PREFIX}.l{i}"), h)?;
        if i + 1 < layers {
            h = g.gelu(h);
        }
    }
    Ok(h)
}

/// Class logits `[B, classes]` for `chunks[B * N, C, T]` laid out by
/// [`Strategy::trial_chunks`]. `n_real[b]` counts the real chunks of trial
/// `b`; the decoder reads out at the last of them.
pub fn classify<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    arch: &ArchConfig,
    strategy: Strategy,
    chunks: Var,
    n_real: &[usize],
) -> Result<Var> {
    let b = n_real.len();
    let rows = g.shape(chunks)[0];
    if b == 0 || !rows.is_multiple_of(b) {
        return Err(Error::dim("classify", g.shape(chunks), &[b]));
    }
    let n = rows / b;
    let tokens = encoder::encode(g, store, &arch.encoder, chunks)?;
    let e = arch.encoder.token_dim;
    let feats = if strategy.uses_decoder() {
        if n_real.iter().any(|&r| r == 0 || r > n) {
            return Err(Error::Parameter(format!("real chunk counts {n_real:?} outside 1..={n}")));
        }
        let x = g.reshape(tokens, &[b, n, e])?;
        let keys: Vec<bool> = n_real.iter().flat_map(|&r| (0..n).map(move |j| j < r)).collect();
        let h = gpt::hidden(g, store, &arch.decoder, x, &keys)?;
        let last: Vec<usize> = n_real.iter().map(|&r| r - 1).collect();
        gpt::read_out(g, h, &last)?
    } else {
        g.reshape(tokens, &[b, n * e])?
    };
    head(g, store, arch, feats)
}
