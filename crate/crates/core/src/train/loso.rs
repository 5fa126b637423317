use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::finetune::{accuracy, finetune_trials, label_of, predict, prepare, FinetuneConfig, Trial};
use super::MetricsLog;
use super::Record;
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::signal::eegbin;
use crate::tensor::ParamStore;

pub const MANIFEST: &str = "manifest.tsv";

/// Labeled trials plus the list of enrolled subjects (which may include
/// subjects without trials).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub subjects: Vec<String>,
}

impl TrialSet {
    pub fn from_trials(trials: Vec<Trial>) -> Self {
        let mut subjects: Vec<String> = Vec::new();
        for t in &trials {
            if !subjects.contains(&t.subject) {
                subjects.push(t.subject.clone());
            }
        }
        Self { trials, subjects }
    }

    /// Writes one eegbin file per trial plus `manifest.tsv` with columns
    /// `file`, `subject`, `label`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::from("file\tsubject\tlabel\n");
        for (i, t) in self.trials.iter().enumerate() {
            let file = format!("trial_{i:05}.eegbin");
            eegbin::save(&t.data, &dir.join(&file))?;
            manifest.push_str(&format!("{file}\t{}\t{}\n", t.subject, t.label));
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Reads a directory written by [`TrialSet::save`]. Labels may be
    /// integers or class names.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut trials = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [file, subject, label] = cols[..] else {
                return Err(Error::format(&path, format!("line {}: expected 3 columns", n + 1)));
            };
            let label = label
                .parse::<usize>()
                .ok()
                .or_else(|| label_of(label))
                .ok_or_else(|| Error::format(&path, format!("line {}: bad label `{label}`", n + 1)))?;
            trials.push(Trial {
                data: eegbin::load(&dir.join(file))?,
                label,
                subject: subject.to_string(),
            });
        }
        Ok(Self::from_trials(trials))
    }

    /// Copy with labels permuted uniformly at random across all trials.
    pub fn shuffled_labels(&self, seed: u64) -> Self {
        let mut labels: Vec<usize> = self.trials.iter().map(|t| t.label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = self.clone();
        for (t, l) in out.trials.iter_mut().zip(labels) {
            t.label = l;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_subject: String,
    pub train_subjects: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LosoReport {
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
    pub log: MetricsLog,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Leave-one-subject-out evaluation. Every fold starts from `pretrained`
/// (or a fresh initialization from `seed` when `None`), trains on all other
/// subjects and tests on the held-out one. Folds run in parallel and are
/// independent of scheduling.
pub fn loso_evaluate(
    set: &TrialSet,
    arch: &ArchConfig,
    cfg: &FinetuneConfig,
    pretrained: Option<&ParamStore<f32>>,
    seed: u64,
) -> Result<LosoReport> {
    let mut subjects = Vec::new();
    for s in &set.subjects {
        if set.trials.iter().any(|t| &t.subject == s) {
            subjects.push(s.clone());
        } else {
            log::warn!("subject {s} has no trials; excluded");
        }
    }
    for t in &set.trials {
        if !subjects.contains(&t.subject) {
            subjects.push(t.subject.clone());
        }
    }
    if subjects.len() < 2 {
        return Err(Error::Parameter(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    let results: Vec<Result<(FoldResult, MetricsLog)>> = subjects
        .par_iter()
        .enumerate()
        .map(|(fold, test_subject)| {
            let train: Vec<&Trial> = set.trials.iter().filter(|t| &t.subject != test_subject).collect();
            let test: Vec<&Trial> = set.trials.iter().filter(|t| &t.subject == test_subject).collect();
            let train_subjects: Vec<String> = subjects.iter().filter(|s| *s != test_subject).cloned().collect();
            let out = finetune_trials(pretrained, arch, cfg, &train, seed)?;
            let data = prepare::<f32>(arch, cfg.strategy, &test)?;
            let pred = predict(&out.params, arch, cfg.strategy, &data, cfg.batch_size)?;
            let acc = accuracy(&pred, &data.labels);
            let mut log = out.log;
            log.push(Record {
                accuracy: Some(acc),
                ..Record::new("test")
            });
            log.tag_fold(fold, test_subject);
            Ok((
                FoldResult {
                    fold,
                    test_subject: test_subject.clone(),
                    train_subjects,
                    n_train: train.len(),
                    n_test: test.len(),
                    accuracy: acc,
                },
                log,
            ))
        })
        .collect();
    let mut folds = Vec::new();
    let mut log = MetricsLog::default();
    for r in results {
        let (f, l) = r?;
        folds.push(f);
        log.extend(l);
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    Ok(LosoReport { folds, mean, std, log })
}
