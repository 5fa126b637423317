//! Run configuration: one TOML file holding every module's settings.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/desk"
//!
//! [arch]            # n_channels, [arch.chunk], [arch.encoder], [arch.decoder], [arch.head]
//! [preprocess]      # notch_hz, notch_q, band_lo_hz, band_hi_hz, target_hz, interp_max_dist_m
//! [pretrain]        # epochs, batch_size, val_fraction, detach_targets, [pretrain.adam]
//! [finetune]        # strategy, epochs, batch_size, [finetune.adam]
//! [corpus]          # synthetic pre-training corpus for `gen`
//! [trials]          # synthetic trial set for `gen`
//! [data]            # corpus_dir, trials_dir, trial_window_s, montage
//! [sweep]           # axis, values
//! ```
//!
//! Every table is optional and falls back to defaults; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::signal::PreprocessConfig;
use crate::synth::{CorpusSpec, TrialSpec};
use crate::train::{FinetuneConfig, PretrainConfig, SweepAxis};

/// Where real data lives. Unset directories mean synthetic data generated
/// from `[corpus]` / `[trials]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of preprocessed eegbin recordings.
    pub corpus_dir: Option<PathBuf>,
    /// Directory holding a trial `manifest.tsv`.
    pub trials_dir: Option<PathBuf>,
    /// Cut every trial to `[start, end)` seconds before use.
    pub trial_window_s: Option<[f64; 2]>,
    /// Montage file; the built-in 22-channel montage otherwise.
    pub montage: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: String,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: "n_chunks".into(),
            values: vec![4.0, 8.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub arch: ArchConfig,
    pub preprocess: PreprocessConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub corpus: CorpusSpec,
    pub trials: TrialSpec,
    pub data: DataConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            arch: ArchConfig::default(),
            preprocess: PreprocessConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            corpus: CorpusSpec::default(),
            trials: TrialSpec::default(),
            data: DataConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: small architecture and matching synthetic data.
    pub fn desk() -> Self {
        let arch = ArchConfig::desk();
        let c = arch.n_channels;
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/desk"),
            arch,
            pretrain: PretrainConfig {
                epochs: 500,
                batch_size: 8,
                val_fraction: 0.25,
                adam: crate::tensor::optim::AdamConfig {
                    lr: 1e-3,
                    ..Default::default()
                },
                ..Default::default()
            },
            corpus: CorpusSpec {
                n_channels: c,
                duration_s: 4.0,
                ..Default::default()
            },
            trials: TrialSpec {
                n_channels: c,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        let p = &self.preprocess;
        let nyq = p.target_hz / 2.0;
        if !(p.target_hz > 0.0 && p.band_lo_hz > 0.0 && p.band_lo_hz < p.band_hi_hz && p.notch_q > 0.0) {
            return Err(Error::Config(format!(
                "preprocess: need target_hz > 0, 0 < band_lo_hz < band_hi_hz and notch_q > 0 (got {p:?})"
            )));
        }
        if p.band_hi_hz > nyq {
            log::warn!("preprocess.band_hi_hz {} above the output Nyquist {nyq} Hz", p.band_hi_hz);
        }
        if p.target_hz != self.arch.chunk.sample_rate_hz {
            return Err(Error::Config(format!(
                "preprocess.target_hz {} differs from arch.chunk.sample_rate_hz {}",
                p.target_hz, self.arch.chunk.sample_rate_hz
            )));
        }
        if let Some([a, b]) = self.data.trial_window_s {
            if !(a >= 0.0 && a < b) {
                return Err(Error::Config(format!("data.trial_window_s [{a}, {b}] is not a window")));
            }
        }
        self.sweep.axis.parse::<SweepAxis>()?;
        Ok(())
    }

    /// Writes the resolved configuration as `config.toml` in `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
