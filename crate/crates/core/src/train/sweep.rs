use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::loso::{loso_evaluate, TrialSet};
use super::pretrain::{pretrain, PretrainConfig};
use super::FinetuneConfig;
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::signal::Recording;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NChunks,
    ChunkLen,
    Overlap,
    ModelDim,
    NLayers,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::NChunks,
        SweepAxis::ChunkLen,
        SweepAxis::Overlap,
        SweepAxis::ModelDim,
        SweepAxis::NLayers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NChunks => "n_chunks",
            SweepAxis::ChunkLen => "chunk_len",
            SweepAxis::Overlap => "overlap",
            SweepAxis::ModelDim => "model_dim",
            SweepAxis::NLayers => "n_layers",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ArchConfig, value: f64) -> Result<ArchConfig> {
        let mut a = base.clone();
        let int = || {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} needs a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepAxis::NChunks => {
                let n = int()?;
                a.chunk.n_chunks = n;
                a.decoder.max_positions = a.decoder.max_positions.max(n);
            }
            SweepAxis::ChunkLen => a.chunk.chunk_len_s = value,
            SweepAxis::Overlap => a.chunk.overlap_ratio = value,
            SweepAxis::ModelDim => a.decoder.model_dim = int()?,
            SweepAxis::NLayers => a.decoder.n_layers = int()?,
        }
        a.validate()?;
        Ok(a)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    /// `ok`, or why the value was skipped.
    pub status: String,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
}

/// Drops repeated values, keeping first occurrences.
pub fn dedup_values(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &v in values {
        if out.contains(&v) {
            log::warn!("duplicate sweep value {v} ignored");
        } else {
            out.push(v);
        }
    }
    out
}

/// Pre-trains and evaluates one configuration per value. Invalid values are
/// recorded as skipped rows.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    axis: SweepAxis,
    values: &[f64],
    base: &ArchConfig,
    pre: &PretrainConfig,
    ft: &FinetuneConfig,
    corpus: &[Recording],
    trials: &TrialSet,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let values = dedup_values(values);
    values
        .par_iter()
        .map(|&value| {
            let skipped = |reason: String| SweepRow {
                axis,
                value,
                status: reason,
                final_train_loss: None,
                final_val_loss: None,
                accuracy_mean: None,
                accuracy_std: None,
            };
            let arch = match axis.apply(base, value) {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("sweep {axis}={value} skipped: {e}");
                    return Ok(skipped(format!("skipped: {e}")));
                }
            };
            let out = pretrain::<f32>(corpus, &arch, pre, seed)?;
            let report = loso_evaluate(trials, &arch, ft, Some(&out.checkpoint.params), seed)?;
            Ok(SweepRow {
                status: "ok".into(),
                final_train_loss: out.losses.last().copied(),
                final_val_loss: out.val_losses.last().copied(),
                accuracy_mean: Some(report.mean),
                accuracy_std: Some(report.std),
                ..skipped(String::new())
            })
        })
        .collect()
}

pub fn to_tsv(rows: &[SweepRow]) -> String {
    let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
    let mut s = String::from("axis\tvalue\tstatus\tfinal_train_loss\tfinal_val_loss\taccuracy_mean\taccuracy_std\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.axis,
            r.value,
            r.status.replace(['\t', '\n'], " "),
            opt(r.final_train_loss),
            opt(r.final_val_loss),
            opt(r.accuracy_mean),
            opt(r.accuracy_std)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_dropped_in_order() {
        assert_eq!(dedup_values(&[8.0, 4.0, 8.0, 16.0, 4.0]), vec![8.0, 4.0, 16.0]);
    }

    #[test]
    fn integer_axes_reject_fractions() {
        let base = ArchConfig::default();
        assert!(SweepAxis::NChunks.apply(&base, 4.5).is_err());
        assert!(SweepAxis::NLayers.apply(&base, 0.0).is_err());
        let a = SweepAxis::NChunks.apply(&base, 64.0).unwrap();
        assert_eq!((a.chunk.n_chunks, a.decoder.max_positions), (64, 64));
        assert!(SweepAxis::Overlap.apply(&base, 1.0).is_err());
    }
}
