//! Fixed-geometry chunk sequences cut from a preprocessed recording.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Recording;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkConfig {
    pub n_chunks: usize,
    pub chunk_len_s: f64,
    pub overlap_ratio: f64,
    pub sample_rate_hz: f64,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            n_chunks: 32,
            chunk_len_s: 2.0,
            overlap_ratio: 0.1,
            sample_rate_hz: 250.0,
        }
    }
}

/// Round half up, tolerant of representation noise just below the half.
fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chunks == 0 {
            return Err(Error::Config("chunk.n_chunks must be at least 1".into()));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Config("chunk.sample_rate_hz must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(Error::Config(format!(
                "chunk.overlap_ratio {} outside [0, 1)",
                self.overlap_ratio
            )));
        }
        if !(self.chunk_len_s.is_finite() && self.chunk_len_samples() >= 2) {
            return Err(Error::Config(format!(
                "chunk.chunk_len_s {} gives fewer than 2 samples",
                self.chunk_len_s
            )));
        }
        if self.stride_samples() == 0 {
            return Err(Error::Config("chunk stride rounds to 0 samples".into()));
        }
        Ok(())
    }

    pub fn chunk_len_samples(&self) -> usize {
        round_half_up(self.chunk_len_s * self.sample_rate_hz)
    }

    pub fn stride_samples(&self) -> usize {
        round_half_up(self.chunk_len_samples() as f64 * (1.0 - self.overlap_ratio))
    }

    /// Samples covered by a full sequence: `len + (N - 1) * stride`.
    pub fn required_span(&self) -> usize {
        self.chunk_len_samples() + (self.n_chunks - 1) * self.stride_samples()
    }
}

/// Where a sequence came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSource {
    pub subject_id: String,
    pub session_id: String,
    pub start: usize,
    pub stride: usize,
    /// Samples available in the recording from `start` on.
    pub real_samples: usize,
}

/// `N` chunks of `C x T` samples, stored contiguously as `[N, C, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkSequence {
    n_chunks: usize,
    n_channels: usize,
    chunk_len: usize,
    data: Vec<f64>,
    /// `true` for chunks holding any recorded samples; padding is a suffix.
    pub pad_mask: Vec<bool>,
    pub source: ChunkSource,
}

impl ChunkSequence {
    pub fn n_chunks(&self) -> usize {
        self.n_chunks
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn n_real(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    /// Row-major `C x T` samples of chunk `i`.
    pub fn chunk(&self, i: usize) -> &[f64] {
        let size = self.n_channels * self.chunk_len;
        &self.data[i * size..(i + 1) * size]
    }

    pub fn chunk_mut(&mut self, i: usize) -> &mut [f64] {
        let size = self.n_channels * self.chunk_len;
        &mut self.data[i * size..(i + 1) * size]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `[N, C, T]` tensor in the requested precision.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let shape = [self.n_chunks, self.n_channels, self.chunk_len];
        Tensor::new(&shape, self.data.iter().map(|&v| T::of(v)).collect()).expect("consistent geometry")
    }
}

fn build(rec: &Recording, cfg: &ChunkConfig, start: usize) -> Result<ChunkSequence> {
    let s = rec.n_samples();
    if s == 0 {
        return Err(Error::EmptyRecording);
    }
    if (rec.sample_rate_hz - cfg.sample_rate_hz).abs() > 1e-6 {
        return Err(Error::Parameter(format!(
            "recording at {} Hz, chunk config expects {} Hz",
            rec.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    let (n, c, t, stride) = (cfg.n_chunks, rec.n_channels(), cfg.chunk_len_samples(), cfg.stride_samples());
    let mut data = vec![0.0; n * c * t];
    let mut pad_mask = vec![false; n];
    for (i, mask) in pad_mask.iter_mut().enumerate() {
        let offset = start + i * stride;
        if offset >= s {
            continue;
        }
        *mask = true;
        let avail = (s - offset).min(t);
        for ch in 0..c {
            let dst = (i * c + ch) * t;
            data[dst..dst + avail].copy_from_slice(&rec.channel(ch)[offset..offset + avail]);
        }
    }
    Ok(ChunkSequence {
        n_chunks: n,
        n_channels: c,
        chunk_len: t,
        data,
        pad_mask,
        source: ChunkSource {
            subject_id: rec.subject_id.clone(),
            session_id: rec.session_id.clone(),
            start,
            stride,
            real_samples: s - start,
        },
    })
}

/// Random-start sequence: the start is uniform over every position where the
/// full span fits; shorter recordings start at 0 and are zero-padded.
pub fn sample_sequence<R: Rng + ?Sized>(rec: &Recording, cfg: &ChunkConfig, rng: &mut R) -> Result<ChunkSequence> {
    cfg.validate()?;
    let span = cfg.required_span();
    let s = rec.n_samples();
    let start = if s >= span { rng.random_range(0..=s - span) } else { 0 };
    build(rec, cfg, start)
}

/// Deterministic sequence starting at sample 0.
pub fn fixed_sequence(rec: &Recording, cfg: &ChunkConfig) -> Result<ChunkSequence> {
    cfg.validate()?;
    build(rec, cfg, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_samples_round_up() {
        assert_eq!(round_half_up(40.5), 41);
        assert_eq!(round_half_up(40.499), 40);
        let cfg = ChunkConfig {
            n_chunks: 2,
            chunk_len_s: 0.25,
            overlap_ratio: 0.5,
            sample_rate_hz: 250.0,
        };
        // 62.5 -> 63 samples, stride 31.5 -> 32
        assert_eq!(cfg.chunk_len_samples(), 63);
        assert_eq!(cfg.stride_samples(), 32);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            ChunkConfig {
                n_chunks: 0,
                ..Default::default()
            },
            ChunkConfig {
                overlap_ratio: 1.0,
                ..Default::default()
            },
            ChunkConfig {
                chunk_len_s: 0.001,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn rate_mismatch_is_parameter_error() {
        let rec = Recording::new(vec!["a".into()], vec![vec![0.0; 600]], 500.0).unwrap();
        assert!(matches!(
            fixed_sequence(&rec, &ChunkConfig::default()),
            Err(Error::Parameter(_))
        ));
    }
}
