use std::f64::consts::PI;

use super::Recording;
use crate::error::{Error, Result};

// Half-width of the interpolation kernel, in zero crossings of the sinc.
const ZERO_CROSSINGS: f64 = 32.0;
// Anti-alias cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.9;

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling by windowed-sinc interpolation. The output holds
/// `floor(S * target / source)` samples; the low-pass cutoff sits below the
/// lower of the two Nyquist frequencies.
pub fn resample(rec: &Recording, target_hz: f64) -> Result<Recording> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::Parameter(format!("target rate {target_hz} must be positive")));
    }
    let src = rec.sample_rate_hz;
    if (src - target_hz).abs() < 1e-9 {
        return Ok(rec.clone());
    }
    let ratio = target_hz / src;
    let n_in = rec.n_samples();
    let n_out = ((n_in as f64) * ratio + 1e-9).floor() as usize;
    if n_out == 0 {
        return Err(Error::EmptyRecording);
    }
    // cycles per input sample
    let cutoff = 0.5 * ratio.min(1.0) * ROLLOFF;
    let half = ZERO_CROSSINGS / (2.0 * cutoff);

    // weights depend only on the output index, so compute them once
    let taps: Vec<(usize, Vec<f64>)> = (0..n_out)
        .map(|m| {
            let center = m as f64 / ratio;
            let lo = ((center - half).ceil().max(0.0)) as usize;
            let hi = ((center + half).floor() as usize).min(n_in - 1);
            let mut w: Vec<f64> = (lo..=hi)
                .map(|n| {
                    let d = n as f64 - center;
                    2.0 * cutoff * sinc(2.0 * cutoff * d) * blackman(d / half)
                })
                .collect();
            let total: f64 = w.iter().sum();
            if total.abs() > 1e-12 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w)
        })
        .collect();

    let mut data = Vec::with_capacity(rec.n_channels() * n_out);
    for c in 0..rec.n_channels() {
        let x = rec.channel(c);
        data.extend(
            taps.iter()
                .map(|(lo, w)| w.iter().zip(&x[*lo..]).map(|(a, b)| a * b).sum::<f64>()),
        );
    }
    Ok(rec.with_samples(data, n_out, target_hz))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_rate_is_identity() {
        let rec = Recording::new(vec!["a".into()], vec![vec![1.0, 4.0, -2.0]], 250.0).unwrap();
        assert_eq!(resample(&rec, 250.0).unwrap(), rec);
    }

    #[test]
    fn length_is_rounded_down() {
        let rec = Recording::new(vec!["a".into()], vec![vec![0.0; 10_000]], 1000.0).unwrap();
        let out = resample(&rec, 250.0).unwrap();
        assert_eq!(out.n_samples(), 2500);
        assert_eq!(out.sample_rate_hz, 250.0);
        let odd = Recording::new(vec!["a".into()], vec![vec![0.0; 1001]], 256.0).unwrap();
        assert_eq!(resample(&odd, 250.0).unwrap().n_samples(), 977);
    }

    #[test]
    fn constant_is_preserved() {
        let rec = Recording::new(vec!["a".into()], vec![vec![2.5; 400]], 500.0).unwrap();
        let out = resample(&rec, 250.0).unwrap();
        assert!(out.data().iter().all(|v| (v - 2.5).abs() < 1e-9));
    }
}
