use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One sweep value and its metrics, in the order of [`StudyReport::columns`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub parameter: f64,
    pub metrics: Vec<Option<f64>>,
    pub verdict: Option<bool>,
    /// Set when the solve behind this row failed.
    pub error: Option<String>,
}

impl StudyRow {
    pub fn ok(parameter: f64, metrics: Vec<Option<f64>>) -> Self {
        StudyRow {
            parameter,
            metrics,
            verdict: None,
            error: None,
        }
    }

    pub fn failed(parameter: f64, width: usize, error: impl Into<String>) -> Self {
        StudyRow {
            parameter,
            metrics: vec![None; width],
            verdict: Some(false),
            error: Some(error.into()),
        }
    }

    pub fn metric(&self, k: usize) -> Option<f64> {
        self.metrics.get(k).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: String,
    /// Name of the swept parameter.
    pub parameter: String,
    pub columns: Vec<String>,
    pub rows: Vec<StudyRow>,
    pub verdicts: BTreeMap<String, bool>,
    /// Scalar results that are not per-row.
    pub summary: BTreeMap<String, f64>,
    pub diagnostics: Vec<String>,
}

impl StudyReport {
    pub fn new(study: &str, parameter: &str, columns: &[&str]) -> Self {
        StudyReport {
            study: study.to_string(),
            parameter: parameter.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            verdicts: BTreeMap::new(),
            summary: BTreeMap::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of a metric column, one per row.
    pub fn series(&self, name: &str) -> Vec<Option<f64>> {
        match self.column(name) {
            Some(k) => self.rows.iter().map(|r| r.metric(k)).collect(),
            None => vec![None; self.rows.len()],
        }
    }

    /// True when every verdict holds and no row failed.
    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|v| *v) && self.rows.iter().all(|r| r.error.is_none())
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub case: String,
    pub constants: BTreeMap<String, f64>,
    pub pass: bool,
    /// Set when a fit residual exceeded its threshold.
    pub flagged: bool,
    pub diagnostics: Vec<String>,
}
