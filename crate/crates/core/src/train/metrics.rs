//! Line-delimited JSON metrics.
//!
//! Field names: `step`, `epoch`, `split` (`train`, `val`, `test`), `loss`,
//! `accuracy`, `fold`, `subject`, plus `embedding_var` during pre-training
//! and `frozen_digest` when a strategy freezes the encoder. Records carry no
//! timestamps, so two runs with one seed produce identical logs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frozen_digest: Option<String>,
}

impl Record {
    pub fn new(split: &str) -> Self {
        Self {
            split: split.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<Record>,
}

impl MetricsLog {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.records.extend(other.records);
    }

    /// Tags every record with a fold index and held-out subject.
    pub fn tag_fold(&mut self, fold: usize, subject: &str) {
        for r in &mut self.records {
            r.fold = Some(fold);
            r.subject.get_or_insert_with(|| subject.to_string());
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("metrics serialize"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    pub fn losses(&self, split: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.split == split).filter_map(|r| r.loss).collect()
    }
}
