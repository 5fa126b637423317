use nalgebra::DMatrix;
use neurogpt::signal::{preprocess, Montage, PreprocessConfig};
use neurogpt::synth::{gen_pretrain_corpus, gen_trialset, CorpusSpec, TrialSpec};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn corpus_spec(noise: f64) -> CorpusSpec {
    CorpusSpec {
        n_recordings: 6,
        n_subjects: 3,
        n_channels: 5,
        duration_s: 8.0,
        noise_std: noise,
        ..Default::default()
    }
}

fn spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..x.len() / 2].iter().map(|c| c.norm_sqr()).collect()
}

fn autocorr(x: &[f64], lag: usize) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let num: f64 = d[..d.len() - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum();
    let den = (d[..d.len() - lag].iter().map(|a| a * a).sum::<f64>() * d[lag..].iter().map(|a| a * a).sum::<f64>()).sqrt();
    num / den
}

#[test]
fn noiseless_corpus_is_periodic() {
    let c = gen_pretrain_corpus(&corpus_spec(0.0), 1).unwrap();
    for (rec, &p) in c.recordings.iter().zip(&c.periods) {
        for ch in 0..rec.n_channels() {
            assert!(autocorr(rec.channel(ch), p) > 0.99);
        }
    }
}

#[test]
fn corpus_is_seed_deterministic() {
    let a = gen_pretrain_corpus(&corpus_spec(0.3), 9).unwrap();
    let b = gen_pretrain_corpus(&corpus_spec(0.3), 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, gen_pretrain_corpus(&corpus_spec(0.3), 10).unwrap());
}

#[test]
fn spectral_peak_sits_at_the_fundamental() {
    let c = gen_pretrain_corpus(&corpus_spec(0.3), 2).unwrap();
    for (rec, &f) in c.recordings.iter().zip(&c.freqs_hz) {
        assert!((8.0..=12.0).contains(&f));
        let n = rec.n_samples();
        let mut power = vec![0.0; n / 2];
        for ch in 0..rec.n_channels() {
            for (p, q) in power.iter_mut().zip(spectrum(rec.channel(ch))) {
                *p += q;
            }
        }
        let k = (1..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
        let peak = k as f64 * rec.sample_rate_hz / n as f64;
        assert!((peak - f).abs() < 0.5, "peak {peak} vs {f}");
    }
}

#[test]
fn trial_counts_and_balance() {
    let spec = TrialSpec {
        n_subjects: 2,
        trials_per_class: 3,
        n_channels: 6,
        ..Default::default()
    };
    let set = gen_trialset(&spec, 0).unwrap();
    assert_eq!(set.trials.len(), 24);
    for s in &set.subjects {
        let mut counts = [0; 4];
        for t in set.trials.iter().filter(|t| &t.subject == s) {
            counts[t.label] += 1;
            assert_eq!(t.data.n_samples(), 1000);
        }
        assert_eq!(counts, [3; 4]);
    }
    assert_eq!(gen_trialset(&spec, 0).unwrap(), set);
}

/// Amplitude of the `f` Hz component of `x` by projection on sine and cosine.
fn amplitude(x: &[f64], f: f64, fs: f64) -> f64 {
    let n = x.len() as f64;
    let (mut s, mut c) = (0.0, 0.0);
    for (t, &v) in x.iter().enumerate() {
        let w = 2.0 * std::f64::consts::PI * f * t as f64 / fs;
        s += v * w.sin();
        c += v * w.cos();
    }
    2.0 * (s * s + c * c).sqrt() / n
}

#[test]
fn noiseless_trials_differ_only_in_phase() {
    let spec = TrialSpec {
        n_subjects: 2,
        trials_per_class: 4,
        n_channels: 8,
        noise_std: 0.0,
        ..Default::default()
    };
    let set = gen_trialset(&spec, 4).unwrap();
    for s in &set.subjects {
        for label in 0..4 {
            let f = spec.class_freqs_hz[label];
            let group: Vec<_> = set.trials.iter().filter(|t| &t.subject == s && t.label == label).collect();
            let first = group[0];
            for t in &group[1..] {
                for ch in 0..8 {
                    let (a, b) = (first.data.channel(ch), t.data.channel(ch));
                    let ea: f64 = a.iter().map(|v| v * v).sum();
                    let eb: f64 = b.iter().map(|v| v * v).sum();
                    if ch % 4 == label {
                        assert!((amplitude(a, f, 250.0) - amplitude(b, f, 250.0)).abs() < 1e-9);
                        assert!((ea - eb).abs() < 1e-6 * ea);
                    } else {
                        assert_eq!((ea, eb), (0.0, 0.0));
                    }
                }
            }
        }
    }
}

fn band_power_features(x: &neurogpt::signal::Recording, freqs: &[f64]) -> Vec<f64> {
    let n = x.n_samples();
    let mut feats = vec![1.0];
    for ch in 0..x.n_channels() {
        let p = spectrum(x.channel(ch));
        for &f in freqs {
            let k = (f * n as f64 / x.sample_rate_hz).round() as usize;
            feats.push(p[k - 1..=k + 1].iter().sum::<f64>().ln_1p());
        }
    }
    feats
}

#[test]
fn band_power_least_squares_classifier() {
    let spec = TrialSpec {
        n_subjects: 3,
        trials_per_class: 10,
        n_channels: 8,
        noise_std: 0.01,
        ..Default::default()
    };
    let set = gen_trialset(&spec, 8).unwrap();
    let feats: Vec<Vec<f64>> = set.trials.iter().map(|t| band_power_features(&t.data, &spec.class_freqs_hz)).collect();
    let d = feats[0].len();
    let mut correct = 0;
    // train on two subjects, test on the third
    for held in &set.subjects {
        let train: Vec<usize> = (0..feats.len()).filter(|&i| &set.trials[i].subject != held).collect();
        let x = DMatrix::from_fn(train.len(), d, |r, c| feats[train[r]][c]);
        let y = DMatrix::from_fn(train.len(), 4, |r, c| if set.trials[train[r]].label == c { 1.0 } else { -1.0 });
        let w = (x.transpose() * &x + DMatrix::identity(d, d) * 1e-6)
            .lu()
            .solve(&(x.transpose() * y))
            .unwrap();
        for i in (0..feats.len()).filter(|&i| &set.trials[i].subject == held) {
            let row = DMatrix::from_row_slice(1, d, &feats[i]) * &w;
            let pred = (0..4).max_by(|&a, &b| row[(0, a)].total_cmp(&row[(0, b)])).unwrap();
            correct += (pred == set.trials[i].label) as usize;
        }
    }
    let acc = correct as f64 / set.trials.len() as f64;
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn generated_data_survives_preprocessing() {
    let montage = Montage::default_22();
    let cfg = PreprocessConfig::default();
    let corpus = gen_pretrain_corpus(
        &CorpusSpec {
            n_recordings: 2,
            n_channels: 22,
            duration_s: 4.0,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    for r in &corpus.recordings {
        let (out, _) = preprocess(r, &montage, &cfg).unwrap();
        assert_eq!(out.n_channels(), 22);
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
    let set = gen_trialset(
        &TrialSpec {
            n_subjects: 1,
            trials_per_class: 1,
            n_channels: 4,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    for t in &set.trials {
        let (out, rep) = preprocess(&t.data, &montage, &cfg).unwrap();
        assert_eq!(rep.interpolated.len(), 18);
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}
