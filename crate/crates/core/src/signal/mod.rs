//! Recording type and the preprocessing chain applied before chunking.
//!
//! Chain order: channel selection, bad-channel interpolation, average
//! re-reference, notch, bandpass, resampling, detrending, z-normalization.
//! Every step is a pure `Recording -> Recording` function.

pub mod eegbin;
mod filter;
mod montage;
mod resample;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{bandpass_filter, default_pad, filtfilt, notch_filter, Biquad};
pub use montage::{
    apply_channel_transform, interpolate_bad, normalize_label, select_channels, ChannelTransform, Montage,
};
pub use resample::resample;

/// Multichannel time series, channels x samples, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    data: Vec<f64>,
    n_samples: usize,
    pub sample_rate_hz: f64,
    pub channel_labels: Vec<String>,
    pub subject_id: String,
    pub session_id: String,
    pub bad_channels: BTreeSet<usize>,
}

impl Recording {
    pub fn new(channel_labels: Vec<String>, rows: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        let n_samples = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_samples) {
            return Err(Error::Parameter("channels have different lengths".into()));
        }
        Self::from_flat(channel_labels, rows.concat(), n_samples, sample_rate_hz)
    }

    pub fn from_flat(
        channel_labels: Vec<String>,
        data: Vec<f64>,
        n_samples: usize,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Parameter(format!("sample rate {sample_rate_hz} must be positive")));
        }
        if n_samples == 0 || channel_labels.is_empty() {
            return Err(Error::EmptyRecording);
        }
        if data.len() != channel_labels.len() * n_samples {
            return Err(Error::Parameter(format!(
                "{} labels x {n_samples} samples does not match {} values",
                channel_labels.len(),
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_samples,
            sample_rate_hz,
            channel_labels,
            subject_id: String::new(),
            session_id: String::new(),
            bad_channels: BTreeSet::new(),
        })
    }

    pub fn with_subject(mut self, subject: impl Into<String>, session: impl Into<String>) -> Self {
        self.subject_id = subject.into();
        self.session_id = session.into();
        self
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels.iter().position(|l| l == label)
    }

    /// Same metadata, new samples (possibly a different length or rate).
    /// Samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if !(start < end && end <= self.n_samples) {
            return Err(Error::Parameter(format!(
                "sample range {start}..{end} outside 0..{}",
                self.n_samples
            )));
        }
        let data = (0..self.n_channels()).flat_map(|c| self.channel(c)[start..end].iter().copied()).collect();
        Ok(self.with_samples(data, end - start, self.sample_rate_hz))
    }

    pub(crate) fn with_samples(&self, data: Vec<f64>, n_samples: usize, sample_rate_hz: f64) -> Self {
        debug_assert_eq!(data.len(), self.n_channels() * n_samples);
        Self {
            data,
            n_samples,
            sample_rate_hz,
            ..self.clone()
        }
    }

    fn map_channels(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let data = (0..self.n_channels()).flat_map(|c| f(self.channel(c))).collect();
        self.with_samples(data, self.n_samples, self.sample_rate_hz)
    }
}

/// Subtracts the across-channel mean from every sample.
pub fn rereference_average(rec: &Recording) -> Recording {
    let (c, s) = (rec.n_channels(), rec.n_samples());
    let mut out = rec.clone();
    for t in 0..s {
        let mean = (0..c).map(|ch| rec.data[ch * s + t]).sum::<f64>() / c as f64;
        for ch in 0..c {
            out.data[ch * s + t] -= mean;
        }
    }
    out
}

/// Removes each channel's least-squares line (offset and slope).
pub fn detrend_and_center(rec: &Recording) -> Recording {
    rec.map_channels(|x| {
        let n = x.len() as f64;
        let t_mean = (n - 1.0) / 2.0;
        let x_mean = x.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let dt = i as f64 - t_mean;
            sxy += dt * (v - x_mean);
            sxx += dt * dt;
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        x.iter()
            .enumerate()
            .map(|(i, &v)| v - x_mean - slope * (i as f64 - t_mean))
            .collect()
    })
}

/// Per-channel z-transform over time with population standard deviation.
/// Zero-variance channels become all zeros.
pub fn znormalize(rec: &Recording) -> Recording {
    rec.map_channels(|x| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * (1.0 + mean.abs()) {
            vec![0.0; x.len()]
        } else {
            x.iter().map(|v| (v - mean) / std).collect()
        }
    })
}

/// Settings for the full preprocessing chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub notch_hz: f64,
    pub notch_q: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub target_hz: f64,
    pub interp_max_dist_m: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            notch_hz: 60.0,
            notch_q: 30.0,
            band_lo_hz: 0.5,
            band_hi_hz: 100.0,
            target_hz: 250.0,
            interp_max_dist_m: 0.05,
        }
    }
}

/// What the chain did to one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessReport {
    pub original_rate_hz: f64,
    pub interpolated: Vec<String>,
}

/// Runs the full chain and returns the cleaned recording at the target rate.
pub fn preprocess(rec: &Recording, montage: &Montage, cfg: &PreprocessConfig) -> Result<(Recording, PreprocessReport)> {
    let selected = select_channels(rec, montage)?;
    let interpolated = selected
        .bad_channels
        .iter()
        .map(|&i| selected.channel_labels[i].clone())
        .collect();
    let report = PreprocessReport {
        original_rate_hz: rec.sample_rate_hz,
        interpolated,
    };
    let x = interpolate_bad(&selected, montage, cfg.interp_max_dist_m)?;
    let x = rereference_average(&x);
    let x = notch_filter(&x, cfg.notch_hz, cfg.notch_q)?;
    let x = bandpass_filter(&x, cfg.band_lo_hz, cfg.band_hi_hz)?;
    let x = resample(&x, cfg.target_hz)?;
    let x = detrend_and_center(&x);
    Ok((znormalize(&x), report))
}

/// Downstream-trial preparation: optional channel remap, bandpass, and
/// per-trial normalization over time.
pub fn prepare_trial(rec: &Recording, cfg: &PreprocessConfig, xf: Option<&ChannelTransform>) -> Result<Recording> {
    let x = match xf {
        Some(xf) => apply_channel_transform(rec, xf)?,
        None => rec.clone(),
    };
    let x = bandpass_filter(&x, cfg.band_lo_hz, cfg.band_hi_hz)?;
    Ok(znormalize(&x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rows: Vec<Vec<f64>>) -> Recording {
        let labels = (0..rows.len()).map(|i| format!("ch{i}")).collect();
        Recording::new(labels, rows, 250.0).unwrap()
    }

    #[test]
    fn zero_samples_is_empty_recording() {
        assert!(matches!(
            Recording::new(vec!["a".into()], vec![vec![]], 250.0),
            Err(Error::EmptyRecording)
        ));
    }

    #[test]
    fn rereference_identical_channels_gives_zero() {
        let r = rereference_average(&rec(vec![vec![1.0, -2.0, 3.0]; 4]));
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rereference_leaves_zero_mean_pair_alone() {
        let a = vec![1.0, 2.5, -3.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let input = rec(vec![a, neg]);
        assert_eq!(rereference_average(&input), input);
    }

    #[test]
    fn detrend_removes_exact_lines_and_constants() {
        let line: Vec<f64> = (0..50).map(|t| 2.0 * t as f64 + 3.0).collect();
        let out = detrend_and_center(&rec(vec![line, vec![5.0; 50]]));
        assert!(out.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn znormalize_hand_values() {
        let out = znormalize(&rec(vec![vec![1.0, 2.0, 3.0], vec![4.0; 3]]));
        let s = (2.0f64 / 3.0).sqrt();
        let expect = [-1.0 / s, 0.0, 1.0 / s];
        for (o, e) in out.channel(0).iter().zip(expect) {
            assert!((o - e).abs() < 1e-12);
        }
        assert!((out.channel(0)[2] - 1.2247).abs() < 1e-4);
        assert_eq!(out.channel(1), &[0.0; 3]);
    }
}
