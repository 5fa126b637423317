use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MetricsLog, Record};
use crate::chunk::{fixed_sequence, ChunkConfig};
use crate::encoder;
use crate::error::{Error, Result};
use crate::model::{build_classifier, classify, hex, ArchConfig, Strategy};
use crate::signal::Recording;
use crate::tensor::optim::{Adam, AdamConfig, Optimizer};
use crate::tensor::{Float, Graph, ParamStore, Tensor};

/// Motor-imagery class names in label order.
pub const CLASS_NAMES: [&str; 4] = ["left_hand", "right_hand", "feet", "tongue"];

pub fn label_of(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&c| c == name)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub data: Recording,
    pub label: usize,
    pub subject: String,
}

/// Cuts the `[start_s, end_s)` window of a trial recording.
pub fn trial_window(rec: &Recording, start_s: f64, end_s: f64) -> Result<Recording> {
    let fs = rec.sample_rate_hz;
    let (a, b) = ((start_s * fs).round() as usize, (end_s * fs).round() as usize);
    if !(a < b && b <= rec.n_samples()) {
        return Err(Error::Parameter(format!(
            "window [{start_s}, {end_s}) s is outside a {:.3} s recording",
            rec.duration_s()
        )));
    }
    rec.slice(a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::EncoderOnly,
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("finetune.batch_size must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config("finetune.adam.lr must be positive".into()));
        }
        Ok(())
    }
}

/// Trials chunked for one strategy: `[n_trials * N, C, T]` plus per-trial
/// real chunk counts and labels.
pub struct Prepared<T> {
    pub chunks: Tensor<T>,
    pub n_chunks: usize,
    pub n_real: Vec<usize>,
    pub labels: Vec<usize>,
}

impl<T: Float> Prepared<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>, Vec<usize>)> {
        let per = self.chunks.numel() / self.chunks.shape()[0] * self.n_chunks;
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.chunks.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.chunks.shape().to_vec();
        shape[0] = idx.len() * self.n_chunks;
        Ok((
            Tensor::new(&shape, data)?,
            idx.iter().map(|&i| self.n_real[i]).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        ))
    }
}

pub fn trial_chunk_config(arch: &ArchConfig, strategy: Strategy, trials: &[&Trial]) -> Result<ChunkConfig> {
    let first = trials.first().ok_or_else(|| Error::Parameter("empty trial set".into()))?;
    strategy.trial_chunks(arch, first.data.n_samples())
}

pub fn prepare<T: Float>(arch: &ArchConfig, strategy: Strategy, trials: &[&Trial]) -> Result<Prepared<T>> {
    let cc = trial_chunk_config(arch, strategy, trials)?;
    let mut data = Vec::new();
    let (mut n_real, mut labels) = (Vec::new(), Vec::new());
    for t in trials {
        if t.label >= arch.head.n_classes {
            return Err(Error::Parameter(format!(
                "label {} outside 0..{}",
                t.label, arch.head.n_classes
            )));
        }
        if t.data.n_channels() != arch.n_channels {
            return Err(Error::Parameter(format!(
                "trial has {} channels, the model expects {}",
                t.data.n_channels(),
                arch.n_channels
            )));
        }
        let seq = fixed_sequence(&t.data, &cc)?;
        data.extend(seq.data().iter().map(|&v| T::of(v)));
        n_real.push(seq.n_real());
        labels.push(t.label);
    }
    let shape = [trials.len() * cc.n_chunks, arch.n_channels, cc.chunk_len_samples()];
    Ok(Prepared {
        chunks: Tensor::new(&shape, data)?,
        n_chunks: cc.n_chunks,
        n_real,
        labels,
    })
}

/// Predicted class of every prepared trial, evaluated in batches.
pub fn predict<T: Float>(
    store: &ParamStore<T>,
    arch: &ArchConfig,
    strategy: Strategy,
    data: &Prepared<T>,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for b in idx.chunks(batch_size.max(1)) {
        let (x, n_real, _) = data.batch(b)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let logits = classify(&mut g, store, arch, strategy, xv, &n_real)?;
        let l = g.value(logits);
        for r in 0..b.len() {
            let row = l.row(r);
            let best = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            out.push(best);
        }
    }
    Ok(out)
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

pub struct FinetuneOutcome<T> {
    pub params: ParamStore<T>,
    pub log: MetricsLog,
    pub train_accuracy: f64,
}

/// Cross-entropy training of a classifier built by [`build_classifier`].
/// Frozen parameters never move; for the linear strategy the encoder digest
/// is checked after every epoch and logged.
pub fn finetune<T: Float>(
    mut store: ParamStore<T>,
    arch: &ArchConfig,
    cfg: &FinetuneConfig,
    train: &Prepared<T>,
    val: Option<&Prepared<T>>,
    seed: u64,
) -> Result<FinetuneOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Parameter("empty trial set".into()));
    }
    let strategy = cfg.strategy;
    let frozen_prefix = format!("{}.", encoder::PREFIX);
    let frozen = strategy == Strategy::Linear;
    let digest_before = store.digest(&frozen_prefix);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut opt = Adam::new(cfg.adam.clone());
    let mut log = MetricsLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_accuracy = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for b in order.chunks(cfg.batch_size) {
            let (x, n_real, labels) = train.batch(b)?;
            let mut g = Graph::new();
            let xv = g.input(x);
            let logits = classify(&mut g, &store, arch, strategy, xv, &n_real)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let l = g.value(loss).item().as_f64();
            if !l.is_finite() {
                return Err(Error::Numerical(format!("non-finite fine-tuning loss in epoch {epoch}")));
            }
            total += l * b.len() as f64;
            let grads = g.backward(loss)?;
            opt.step(&mut store, &grads);
        }
        let pred = predict(&store, arch, strategy, train, cfg.batch_size)?;
        train_accuracy = accuracy(&pred, &train.labels);
        let mut rec = Record {
            epoch: Some(epoch),
            step: Some(opt.steps()),
            loss: Some(total / train.len() as f64),
            accuracy: Some(train_accuracy),
            ..Record::new("train")
        };
        if frozen {
            let d = store.digest(&frozen_prefix);
            if d != digest_before {
                return Err(Error::Numerical("frozen encoder parameters changed".into()));
            }
            rec.frozen_digest = Some(hex(&d));
        }
        log.push(rec);
        if let Some(v) = val {
            let pred = predict(&store, arch, strategy, v, cfg.batch_size)?;
            log.push(Record {
                epoch: Some(epoch),
                accuracy: Some(accuracy(&pred, &v.labels)),
                ..Record::new("val")
            });
        }
    }
    Ok(FinetuneOutcome {
        params: store,
        log,
        train_accuracy,
    })
}

/// Builds the classifier from `pretrained` (or a fresh initialization when
/// `None`) and fine-tunes it on `trials`.
pub fn finetune_trials(
    pretrained: Option<&ParamStore<f32>>,
    arch: &ArchConfig,
    cfg: &FinetuneConfig,
    trials: &[&Trial],
    seed: u64,
) -> Result<FinetuneOutcome<f32>> {
    let base = match pretrained {
        Some(p) => p.clone(),
        None => arch.init_params(seed)?,
    };
    let data = prepare::<f32>(arch, cfg.strategy, trials)?;
    let samples = trials[0].data.n_samples();
    let store = build_classifier(&base, arch, cfg.strategy, samples, seed)?;
    finetune(store, arch, cfg, &data, None, seed)
}
