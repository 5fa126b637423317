use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, MetricsLog, Record};
use crate::chunk::{fixed_sequence, sample_sequence, ChunkSequence};
use crate::error::{Error, Result};
use crate::model::{pretrain_forward, ArchConfig};
use crate::signal::Recording;
use crate::tensor::optim::{Adam, AdamConfig, Optimizer};
use crate::tensor::{Float, Graph, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of recordings held out for the validation loss.
    pub val_fraction: f64,
    /// Stop gradients flowing into the encoder through the targets.
    pub detach_targets: bool,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            val_fraction: 0.1,
            detach_targets: false,
            adam: AdamConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "pretrain.val_fraction {} must lie in (0, 1)",
                self.val_fraction
            )));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config("pretrain.adam.lr must be positive".into()));
        }
        Ok(())
    }
}

pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: MetricsLog,
    /// Training loss of every optimizer step.
    pub losses: Vec<f64>,
    /// Validation loss after each epoch, if any recording was held out.
    pub val_losses: Vec<f64>,
}

/// Splits recording indices into (train, val). At least one recording stays
/// in training; a single recording means no validation.
pub fn split_indices(n: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn stack<T: Float>(seqs: &[ChunkSequence]) -> Result<Tensor<T>> {
    let (c, t) = (seqs[0].n_channels(), seqs[0].chunk_len());
    let n: usize = seqs.iter().map(ChunkSequence::n_chunks).sum();
    let data = seqs.iter().flat_map(|s| s.data().iter().map(|&v| T::of(v))).collect();
    Tensor::new(&[n, c, t], data)
}

/// Mean over token dimensions of the variance across real tokens. Falls
/// toward zero if the encoder collapses to a constant embedding.
pub fn embedding_variance<T: Float>(tokens: &Tensor<T>, real: &[bool]) -> f64 {
    let e = tokens.shape()[1];
    let rows: Vec<&[T]> = (0..real.len()).filter(|&i| real[i]).map(|i| tokens.row(i)).collect();
    if rows.len() < 2 {
        return 0.0;
    }
    let n = rows.len() as f64;
    let mut total = 0.0;
    for j in 0..e {
        let mean = rows.iter().map(|r| r[j].as_f64()).sum::<f64>() / n;
        total += rows.iter().map(|r| (r[j].as_f64() - mean).powi(2)).sum::<f64>() / n;
    }
    total / e as f64
}

/// Causal reconstruction loss over whole sequences; `None` if no sequence
/// has two real chunks.
pub fn sequence_loss<T: Float>(
    store: &ParamStore<T>,
    arch: &ArchConfig,
    seqs: &[ChunkSequence],
) -> Result<Option<f64>> {
    let seqs: Vec<ChunkSequence> = seqs.iter().filter(|s| s.n_real() >= 2).cloned().collect();
    if seqs.is_empty() {
        return Ok(None);
    }
    let mut g = Graph::new();
    let x = g.input(stack::<T>(&seqs)?);
    let n_real: Vec<usize> = seqs.iter().map(ChunkSequence::n_real).collect();
    let f = pretrain_forward(&mut g, store, arch, x, &n_real, true)?;
    Ok(Some(g.value(f.loss).item().as_f64()))
}

fn check_recording(rec: &Recording, arch: &ArchConfig, i: usize) -> Result<bool> {
    if rec.n_channels() != arch.n_channels {
        return Err(Error::Parameter(format!(
            "recording {i} has {} channels, the model expects {}",
            rec.n_channels(),
            arch.n_channels
        )));
    }
    if rec.n_samples() == 0 {
        log::warn!("recording {i} is empty; skipped");
        return Ok(false);
    }
    Ok(true)
}

/// Pre-trains encoder and decoder together on the causal reconstruction
/// objective. Each step draws one random sequence per recording of the
/// batch; the batch loss averages the per-recording losses.
pub fn pretrain<T: Float>(
    corpus: &[Recording],
    arch: &ArchConfig,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    pretrain_from(corpus, arch, cfg, seed, arch.init_params::<T>(seed)?)
}

/// As [`pretrain`], continuing from existing parameters.
pub fn pretrain_from<T: Float>(
    corpus: &[Recording],
    arch: &ArchConfig,
    cfg: &PretrainConfig,
    seed: u64,
    mut store: ParamStore<T>,
) -> Result<PretrainOutcome> {
    arch.validate()?;
    cfg.validate()?;
    let mut usable = Vec::new();
    for (i, rec) in corpus.iter().enumerate() {
        if check_recording(rec, arch, i)? {
            usable.push(rec);
        }
    }
    if usable.is_empty() {
        return Err(Error::Parameter("pre-training corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let (train, val) = split_indices(usable.len(), cfg.val_fraction, &mut rng);
    let val_seqs = val
        .iter()
        .map(|&i| fixed_sequence(usable[i], &arch.chunk))
        .collect::<Result<Vec<_>>>()?;

    let mut opt = Adam::new(cfg.adam.clone());
    let mut log = MetricsLog::default();
    let (mut losses, mut val_losses) = (Vec::new(), Vec::new());
    let mut order = train.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut seqs = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = sample_sequence(usable[i], &arch.chunk, &mut rng)?;
                if s.n_real() < 2 {
                    log::warn!("recording {i} yields {} real chunk(s); skipped this step", s.n_real());
                    continue;
                }
                seqs.push(s);
            }
            if seqs.is_empty() {
                continue;
            }
            let n_real: Vec<usize> = seqs.iter().map(ChunkSequence::n_real).collect();
            let real: Vec<bool> = seqs.iter().flat_map(|s| s.pad_mask.iter().copied()).collect();
            let mut g = Graph::new();
            let x = g.input(stack::<T>(&seqs)?);
            let f = pretrain_forward(&mut g, &store, arch, x, &n_real, cfg.detach_targets)?;
            let loss = g.value(f.loss).item().as_f64();
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite pre-training loss at step {}", opt.steps() + 1)));
            }
            let grads = g.backward(f.loss)?;
            opt.step(&mut store, &grads);
            losses.push(loss);
            log.push(Record {
                step: Some(opt.steps()),
                epoch: Some(epoch),
                loss: Some(loss),
                embedding_var: Some(embedding_variance(g.value(f.tokens), &real)),
                ..Record::new("train")
            });
        }
        if let Some(v) = sequence_loss(&store, arch, &val_seqs)? {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite validation loss after epoch {epoch}")));
            }
            val_losses.push(v);
            log.push(Record {
                step: Some(opt.steps()),
                epoch: Some(epoch),
                loss: Some(v),
                ..Record::new("val")
            });
        }
    }
    Ok(PretrainOutcome {
        checkpoint: Checkpoint::new(arch.clone(), seed, opt.steps(), &store),
        log,
        losses,
        val_losses,
    })
}
