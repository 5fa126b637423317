use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::Recording;
use crate::error::{Error, Result};

/// Second-order section, coefficients normalized so `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn normalized(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    /// Notch with a zero pair exactly on `freq_hz`; `q` sets the bandwidth.
    pub fn notch(freq_hz: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * freq_hz / fs;
        let alpha = w0.sin() / (2.0 * q);
        let c = w0.cos();
        Self::normalized([1.0, -2.0 * c, 1.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    /// Second-order Butterworth low-pass.
    pub fn lowpass(freq_hz: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * freq_hz / fs;
        let alpha = w0.sin() / (2.0 * FRAC_1_SQRT_2);
        let c = w0.cos();
        let b = [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0];
        Self::normalized(b, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    /// Second-order Butterworth high-pass.
    pub fn highpass(freq_hz: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * freq_hz / fs;
        let alpha = w0.sin() / (2.0 * FRAC_1_SQRT_2);
        let c = w0.cos();
        let b = [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0];
        Self::normalized(b, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II, starting from the steady state for a
    /// constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y0 = self.dc_gain() * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        let mut z1 = b1 * x0 - a1 * y0 + z2;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Default edge extension: three times the tap count of the cascade.
pub fn default_pad(sections: &[Biquad]) -> usize {
    3 * (2 * sections.len() + 1)
}

/// Zero-phase forward-backward filtering through a cascade of sections.
///
/// The signal is extended at both ends by an odd reflection of `pad` samples
/// (clamped to `len - 1`), and each pass starts from the steady state for its
/// first sample.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

fn apply(rec: &Recording, sections: &[Biquad]) -> Recording {
    let pad = default_pad(sections);
    let data = (0..rec.n_channels())
        .flat_map(|c| filtfilt(sections, rec.channel(c), pad))
        .collect();
    rec.with_samples(data, rec.n_samples(), rec.sample_rate_hz)
}

/// Zero-phase IIR notch at `freq_hz`.
pub fn notch_filter(rec: &Recording, freq_hz: f64, q: f64) -> Result<Recording> {
    let nyquist = rec.sample_rate_hz / 2.0;
    if !(freq_hz > 0.0 && freq_hz < nyquist) {
        return Err(Error::Parameter(format!(
            "notch frequency {freq_hz} Hz outside (0, {nyquist}) Hz"
        )));
    }
    if q <= 0.0 {
        return Err(Error::Parameter(format!("notch quality factor {q} must be positive")));
    }
    Ok(apply(rec, &[Biquad::notch(freq_hz, q, rec.sample_rate_hz)]))
}

/// Zero-phase bandpass: Butterworth high-pass at `lo_hz` cascaded with a
/// Butterworth low-pass at `hi_hz`.
pub fn bandpass_filter(rec: &Recording, lo_hz: f64, hi_hz: f64) -> Result<Recording> {
    let fs = rec.sample_rate_hz;
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs / 2.0) {
        return Err(Error::Parameter(format!(
            "band ({lo_hz}, {hi_hz}) Hz invalid at {fs} Hz sampling"
        )));
    }
    Ok(apply(rec, &[Biquad::highpass(lo_hz, fs), Biquad::lowpass(hi_hz, fs)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_passes_through_lowpass() {
        let x = vec![3.0; 100];
        let y = filtfilt(&[Biquad::lowpass(20.0, 250.0)], &x, 9);
        assert!(y.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn zero_signal_stays_zero() {
        let y = filtfilt(&[Biquad::notch(60.0, 30.0, 250.0)], &[0.0; 64], 9);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn notch_zero_sits_on_frequency() {
        let s = Biquad::notch(60.0, 30.0, 250.0);
        let w = 2.0 * PI * 60.0 / 250.0;
        // |B(e^jw)| = 0
        let re = s.b[0] + s.b[1] * w.cos() + s.b[2] * (2.0 * w).cos();
        let im = -s.b[1] * w.sin() - s.b[2] * (2.0 * w).sin();
        assert!(re.hypot(im) < 1e-12);
    }

    #[test]
    fn rejects_notch_above_nyquist() {
        let rec = Recording::new(vec!["a".into()], vec![vec![0.0; 10]], 100.0).unwrap();
        assert!(matches!(notch_filter(&rec, 60.0, 30.0), Err(Error::Parameter(_))));
        assert!(matches!(bandpass_filter(&rec, 5.0, 2.0), Err(Error::Parameter(_))));
    }
}
