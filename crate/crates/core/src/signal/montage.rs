use std::collections::BTreeSet;
use std::path::Path;

use super::Recording;
use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../data/montage_1020_22.txt");

/// Electrode labels with head-model positions in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Montage {
    pub name: String,
    pub labels: Vec<String>,
    pub positions: Vec<[f64; 3]>,
}

impl Montage {
    /// The 22-channel extended 10-20 layout on a 9 cm sphere.
    pub fn default_22() -> Self {
        Self::parse("standard_1020_22", DEFAULT_TABLE, Path::new("<builtin>")).expect("builtin montage table is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().map_or("montage".into(), |s| s.to_string_lossy().into_owned());
        Self::parse(&name, &text, path)
    }

    /// Parses `label x y z` lines; blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str, origin: &Path) -> Result<Self> {
        let mut labels = Vec::new();
        let mut positions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::format(origin, format!("line {}: expected `label x y z`", lineno + 1)));
            }
            let mut p = [0.0; 3];
            for (slot, f) in p.iter_mut().zip(&fields[1..]) {
                *slot = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(origin, format!("line {}: bad coordinate `{f}`", lineno + 1)))?;
            }
            labels.push(normalize_label(fields[0]));
            positions.push(p);
        }
        let m = Self {
            name: name.to_string(),
            labels,
            positions,
        };
        m.validate().map_err(|reason| Error::format(origin, reason))?;
        Ok(m)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.labels.len() < 2 {
            return Err("montage needs at least two electrodes".into());
        }
        let unique: BTreeSet<&String> = self.labels.iter().collect();
        if unique.len() != self.labels.len() {
            return Err("duplicate electrode label".into());
        }
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.distance(i, j) <= 0.0 {
                    return Err(format!("{} and {} share a position", self.labels[i], self.labels[j]));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n# label x y z (meters)\n", self.name);
        for (l, p) in self.labels.iter().zip(&self.positions) {
            out.push_str(&format!("{l} {} {} {}\n", p[0], p[1], p[2]));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        let key = normalize_label(label);
        self.labels.iter().position(|l| *l == key)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.positions[i], self.positions[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}

/// Canonical label form: uppercase, with common `EEG ` prefixes and
/// reference suffixes removed.
pub fn normalize_label(label: &str) -> String {
    let mut s = label.trim().to_uppercase();
    if let Some(rest) = s.strip_prefix("EEG ") {
        s = rest.trim().to_string();
    }
    for suffix in ["-REF", "-LE", "-AR"] {
        if let Some(rest) = s.strip_suffix(suffix) {
            s = rest.to_string();
            break;
        }
    }
    s
}

/// Picks the montage channels in montage order. Missing channels become
/// zero rows flagged bad; bad flags on the input carry over.
pub fn select_channels(rec: &Recording, montage: &Montage) -> Result<Recording> {
    let lookup: Vec<String> = rec.channel_labels.iter().map(|l| normalize_label(l)).collect();
    let s = rec.n_samples();
    let mut data = Vec::with_capacity(montage.len() * s);
    let mut bad = BTreeSet::new();
    let mut matched = 0;
    for (i, label) in montage.labels.iter().enumerate() {
        match lookup.iter().position(|l| l == label) {
            Some(src) => {
                matched += 1;
                data.extend_from_slice(rec.channel(src));
                if rec.bad_channels.contains(&src) {
                    bad.insert(i);
                }
            }
            None => {
                data.extend(std::iter::repeat_n(0.0, s));
                bad.insert(i);
            }
        }
    }
    if matched < 2 {
        return Err(Error::UnusableRecording(format!(
            "only {matched} of {} montage channels present",
            montage.len()
        )));
    }
    let mut out = Recording::from_flat(montage.labels.clone(), data, s, rec.sample_rate_hz)?;
    out.subject_id = rec.subject_id.clone();
    out.session_id = rec.session_id.clone();
    out.bad_channels = bad;
    Ok(out)
}

/// Replaces each bad channel with the inverse-distance-weighted mean of the
/// good channels within `max_dist_m`. With no such neighbor the nearest good
/// channel is copied and a warning logged.
pub fn interpolate_bad(rec: &Recording, montage: &Montage, max_dist_m: f64) -> Result<Recording> {
    if rec.bad_channels.is_empty() {
        return Ok(rec.clone());
    }
    let pos: Vec<usize> = rec
        .channel_labels
        .iter()
        .map(|l| {
            montage
                .index_of(l)
                .ok_or_else(|| Error::Parameter(format!("channel {l} not in montage {}", montage.name)))
        })
        .collect::<Result<_>>()?;
    let good: Vec<usize> = (0..rec.n_channels()).filter(|c| !rec.bad_channels.contains(c)).collect();
    if good.is_empty() {
        return Err(Error::UnusableRecording("every channel is bad".into()));
    }
    let mut out = rec.clone();
    for &b in &rec.bad_channels {
        let dist = |g: usize| montage.distance(pos[b], pos[g]);
        let mut weights: Vec<(usize, f64)> = good
            .iter()
            .filter(|&&g| dist(g) <= max_dist_m)
            .map(|&g| (g, 1.0 / dist(g)))
            .collect();
        if weights.is_empty() {
            let nearest = *good
                .iter()
                .min_by(|&&a, &&c| dist(a).total_cmp(&dist(c)))
                .expect("good is non-empty");
            log::warn!(
                "{}: no good neighbor within {max_dist_m} m, copying {} ({:.3} m away)",
                rec.channel_labels[b],
                rec.channel_labels[nearest],
                dist(nearest)
            );
            weights.push((nearest, 1.0));
        }
        let total: f64 = weights.iter().map(|w| w.1).sum();
        let row = out.channel_mut(b);
        row.fill(0.0);
        for (g, w) in weights {
            for (o, v) in row.iter_mut().zip(rec.channel(g)) {
                *o += w / total * v;
            }
        }
    }
    out.bad_channels.clear();
    Ok(out)
}

/// Linear remap of channel space, applied as `matrix x data`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTransform {
    pub n: usize,
    pub matrix: Vec<f64>,
    pub source_montage: String,
    pub target_montage: String,
}

impl ChannelTransform {
    pub fn identity(n: usize, montage: &str) -> Self {
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        Self {
            n,
            matrix,
            source_montage: montage.into(),
            target_montage: montage.into(),
        }
    }

    pub fn new(n: usize, matrix: Vec<f64>, source: &str, target: &str) -> Result<Self> {
        if n == 0 || matrix.len() != n * n {
            return Err(Error::Shape {
                shape: vec![matrix.len()],
                reason: format!("expected {n}x{n} transform"),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("channel transform has non-finite entries".into()));
        }
        Ok(Self {
            n,
            matrix,
            source_montage: source.into(),
            target_montage: target.into(),
        })
    }

    /// Reads `n` lines of `n` whitespace-separated reals.
    pub fn parse(text: &str, source: &str, target: &str, origin: &Path) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(origin, format!("line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::format(origin, format!("transform is not square ({n} rows)")));
        }
        Self::new(n, rows.concat(), source, target)
    }

    pub fn from_file(path: &Path, source: &str, target: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, source, target, path)
    }
}

pub fn apply_channel_transform(rec: &Recording, xf: &ChannelTransform) -> Result<Recording> {
    let (c, s) = (rec.n_channels(), rec.n_samples());
    if c != xf.n {
        return Err(Error::dim("apply_channel_transform", &[xf.n, xf.n], &[c, s]));
    }
    let mut data = vec![0.0; c * s];
    for i in 0..c {
        let out = &mut data[i * s..(i + 1) * s];
        for j in 0..c {
            let w = xf.matrix[i * c + j];
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(rec.channel(j)) {
                    *o += w * v;
                }
            }
        }
    }
    Ok(rec.with_samples(data, s, rec.sample_rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXPECTED_LABELS: [&str; 22] = [
        "FP1", "FP2", "F7", "F3", "FZ", "F4", "F8", "T1", "T3", "C3", "CZ", "C4", "T4", "T2", "T5", "P3", "PZ", "P4",
        "T6", "O1", "OZ", "O2",
    ];

    #[test]
    fn default_montage_has_the_22_labels() {
        let m = Montage::default_22();
        assert_eq!(m.labels, EXPECTED_LABELS);
        for p in &m.positions {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 0.09).abs() < 1e-4, "radius {r}");
        }
    }

    #[test]
    fn montage_text_round_trips() {
        let m = Montage::default_22();
        let back = Montage::parse(&m.name, &m.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn label_normalization() {
        assert_eq!(normalize_label("EEG Fp1-REF"), "FP1");
        assert_eq!(normalize_label(" cz "), "CZ");
        assert_eq!(normalize_label("O2-LE"), "O2");
    }

    #[test]
    fn transform_dimension_mismatch() {
        let rec = Recording::new(vec!["a".into(), "b".into()], vec![vec![1.0; 4]; 2], 250.0).unwrap();
        let xf = ChannelTransform::identity(3, "m");
        assert!(matches!(apply_channel_transform(&rec, &xf), Err(Error::Dimension { .. })));
    }

    #[test]
    fn transform_parse_rejects_ragged() {
        let r = ChannelTransform::parse("1 0\n0\n", "a", "b", Path::new("t"));
        assert!(matches!(r, Err(Error::Format { .. })));
    }
}
