//! Seeded synthetic EEG-like data: an unlabeled pre-training corpus and a
//! labeled four-class trial set.
//!
//! Corpus recordings are exactly periodic when noiseless: each one mixes a
//! fundamental whose period is a whole number of samples with its second
//! harmonic, through a per-subject channel mixing matrix.
//!
//! Trial classes oscillate at distinct frequencies on disjoint channel
//! groups (channel `j` carries class `j % 4`).

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Montage, Recording};
use crate::train::{Trial, TrialSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_recordings: usize,
    pub n_subjects: usize,
    pub n_channels: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Fundamentals are drawn from periods whose frequency lies in this band.
    pub band_hz: [f64; 2],
    pub noise_std: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_recordings: 8,
            n_subjects: 4,
            n_channels: 22,
            duration_s: 60.0,
            sample_rate_hz: 250.0,
            band_hz: [8.0, 12.0],
            noise_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialSpec {
    pub n_subjects: usize,
    pub trials_per_class: usize,
    pub n_channels: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// One frequency per class.
    pub class_freqs_hz: Vec<f64>,
    /// Spread of the per-subject channel gains around 1.
    pub subject_gain_spread: f64,
    pub noise_std: f64,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            n_subjects: 3,
            trials_per_class: 12,
            n_channels: 22,
            duration_s: 4.0,
            sample_rate_hz: 250.0,
            class_freqs_hz: vec![6.0, 10.0, 14.0, 18.0],
            subject_gain_spread: 0.2,
            noise_std: 0.5,
        }
    }
}

/// Channel labels: the default montage's first `c` labels, or generic names
/// beyond 22 channels.
pub fn channel_labels(c: usize) -> Vec<String> {
    let m = Montage::default_22();
    if c <= m.len() {
        m.labels[..c].to_vec()
    } else {
        (0..c).map(|i| format!("E{i}")).collect()
    }
}

fn samples(duration_s: f64, fs: f64) -> Result<usize> {
    let s = (duration_s * fs).round();
    if !(s >= 1.0 && fs > 0.0 && s.is_finite()) {
        return Err(Error::Config(format!("{duration_s} s at {fs} Hz gives no samples")));
    }
    Ok(s as usize)
}

fn check_noise(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise_std {sigma} must be finite and >= 0")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub recordings: Vec<Recording>,
    /// Fundamental frequency of each recording.
    pub freqs_hz: Vec<f64>,
    /// Fundamental period in samples.
    pub periods: Vec<usize>,
}

pub fn gen_pretrain_corpus(spec: &CorpusSpec, seed: u64) -> Result<SyntheticCorpus> {
    check_noise(spec.noise_std)?;
    if spec.n_recordings == 0 || spec.n_subjects == 0 || spec.n_channels == 0 {
        return Err(Error::Config("corpus needs recordings, subjects and channels".into()));
    }
    let fs = spec.sample_rate_hz;
    let s = samples(spec.duration_s, fs)?;
    let [lo, hi] = spec.band_hz;
    // even periods so the second harmonic is also a whole number of samples
    let periods: Vec<usize> = ((fs / hi).ceil() as usize..=(fs / lo).floor() as usize)
        .filter(|p| p % 2 == 0 && *p >= 4)
        .collect();
    if periods.is_empty() {
        return Err(Error::Config(format!("no even sample period in {lo}..{hi} Hz at {fs} Hz")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.n_channels;
    let mixing: Vec<Vec<f64>> = (0..spec.n_subjects)
        .map(|_| (0..2 * c).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let labels = channel_labels(c);
    let mut out = SyntheticCorpus {
        recordings: Vec::new(),
        freqs_hz: Vec::new(),
        periods: Vec::new(),
    };
    for r in 0..spec.n_recordings {
        let subject = r % spec.n_subjects;
        let p = periods[rng.random_range(0..periods.len())];
        let (ph1, ph2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let amp = rng.random_range(0.8..1.2);
        let m = &mixing[subject];
        let mut rows = Vec::with_capacity(c);
        for ch in 0..c {
            // the fundamental dominates every channel
            let a1 = amp * (1.0 + 0.5 * m[2 * ch].abs());
            let a2 = amp * 0.4 * m[2 * ch + 1];
            let row: Vec<f64> = (0..s)
                .map(|t| {
                    let w = 2.0 * PI * (t % p) as f64 / p as f64;
                    let x = a1 * (w + ph1).sin() + a2 * (2.0 * w + ph2).sin();
                    if spec.noise_std > 0.0 {
                        x + noise.sample(&mut rng)
                    } else {
                        x
                    }
                })
                .collect();
            rows.push(row);
        }
        let rec = Recording::new(labels.clone(), rows, fs)?.with_subject(format!("S{subject:02}"), format!("R{r:03}"));
        out.recordings.push(rec);
        out.freqs_hz.push(fs / p as f64);
        out.periods.push(p);
    }
    Ok(out)
}

pub fn gen_trialset(spec: &TrialSpec, seed: u64) -> Result<TrialSet> {
    check_noise(spec.noise_std)?;
    let k = spec.class_freqs_hz.len();
    if k < 2 {
        return Err(Error::Config("need at least 2 class frequencies".into()));
    }
    for (i, a) in spec.class_freqs_hz.iter().enumerate() {
        if spec.class_freqs_hz[..i].contains(a) || !(*a > 0.0 && *a < spec.sample_rate_hz / 2.0) {
            return Err(Error::Config(format!("class frequency {a} Hz is repeated or outside (0, Nyquist)")));
        }
    }
    if spec.n_channels < k {
        return Err(Error::Config(format!(
            "{} channels cannot give {k} classes disjoint channel groups",
            spec.n_channels
        )));
    }
    if spec.n_subjects == 0 || spec.trials_per_class == 0 {
        return Err(Error::Config("need subjects and trials".into()));
    }
    let fs = spec.sample_rate_hz;
    let s = samples(spec.duration_s, fs)?;
    let c = spec.n_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let labels = channel_labels(c);
    let mut trials = Vec::new();
    for subj in 0..spec.n_subjects {
        let gains: Vec<f64> = (0..c)
            .map(|_| 1.0 + spec.subject_gain_spread * rng.random_range(-1.0..1.0))
            .collect();
        let name = format!("S{subj:02}");
        for rep in 0..spec.trials_per_class {
            for (label, &f) in spec.class_freqs_hz.iter().enumerate() {
                let phase = rng.random_range(0.0..2.0 * PI);
                let rows: Vec<Vec<f64>> = (0..c)
                    .map(|ch| {
                        let on = ch % k == label;
                        (0..s)
                            .map(|t| {
                                let x = if on {
                                    gains[ch] * (2.0 * PI * f * t as f64 / fs + phase).sin()
                                } else {
                                    0.0
                                };
                                if spec.noise_std > 0.0 {
                                    x + noise.sample(&mut rng)
                                } else {
                                    x
                                }
                            })
                            .collect()
                    })
                    .collect();
                let rec = Recording::new(labels.clone(), rows, fs)?.with_subject(name.clone(), format!("T{rep:03}"));
                trials.push(Trial {
                    data: rec,
                    label,
                    subject: name.clone(),
                });
            }
        }
    }
    Ok(TrialSet::from_trials(trials))
}
