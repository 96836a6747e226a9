//! Retrieval-augmented example store.
//!
//! Past windows are kept as [`LabeledExample`]s: an engineered feature
//! vector, the digest narrative, and a label (`normal` or one of the fault
//! types). Retrieval is an exact linear scan by cosine similarity over
//! z-normalized features — the store is small (hundreds of windows), so
//! approximate indexing would only add nondeterminism.
//!
//! Normalization uses store-wide per-dimension statistics, so queries must
//! be featurized by the same store state they are searched against (that is
//! what [`ExampleStore::featurize_cluster`] / [`featurize_node`] produce).
//! With fewer than two examples the statistics are the identity.
//!
//! [`featurize_node`]: ExampleStore::featurize_node

use crate::meta::{ClusterDigest, NodeDigest, SeriesStats};
use crate::tasks::FaultLabel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Errors raised by the example store.
#[derive(Debug, thiserror::Error)]
pub enum RagError {
    /// A label string is outside the closed label set.
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    /// Retrieval from a store with no examples.
    #[error("example store is empty")]
    EmptyStore,
    /// A vector's dimension disagrees with the store's.
    #[error("feature dimension mismatch: store has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Features must be finite.
    #[error("non-finite feature value at dimension {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Label of a stored example: a healthy window or a known fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExampleLabel {
    Normal,
    Fault(FaultLabel),
}

impl ExampleLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleLabel::Normal => "normal",
            ExampleLabel::Fault(f) => f.as_str(),
        }
    }

    /// Parses from the wire string; anything outside the closed set is an
    /// [`RagError::UnknownLabel`].
    pub fn parse_str(s: &str) -> Result<Self, RagError> {
        if s == "normal" {
            return Ok(ExampleLabel::Normal);
        }
        FaultLabel::parse_str(s)
            .map(ExampleLabel::Fault)
            .map_err(|_| RagError::UnknownLabel(s.to_string()))
    }

    pub fn is_normal(&self) -> bool {
        matches!(self, ExampleLabel::Normal)
    }
}

impl Serialize for ExampleLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ExampleLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ExampleLabel::parse_str(&s).map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for ExampleLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An engineered feature vector (raw, un-normalized scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    fn check_finite(&self) -> Result<(), RagError> {
        for (i, v) in self.0.iter().enumerate() {
            if !v.is_finite() {
                return Err(RagError::NonFinite(i));
            }
        }
        Ok(())
    }
}

/// One stored window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub digest_text: String,
    /// Raw features as produced by the feature builders (normalize at query
    /// time, not at insert time, so statistics can evolve with the store).
    pub features: FeatureVector,
    pub label: ExampleLabel,
}

/// Retrieval filter over labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFilter {
    Normal,
    Abnormal,
    Specific(FaultLabel),
}

impl LabelFilter {
    fn admits(&self, label: &ExampleLabel) -> bool {
        match (self, label) {
            (LabelFilter::Normal, ExampleLabel::Normal) => true,
            (LabelFilter::Abnormal, ExampleLabel::Fault(_)) => true,
            (LabelFilter::Specific(f), ExampleLabel::Fault(g)) => f == g,
            _ => false,
        }
    }
}

/// In-memory example store with JSONL persistence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExampleStore {
    examples: Vec<LabeledExample>,
}

impl ExampleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    /// Inserts an example. A duplicate id replaces the earlier example in
    /// place (upsert), keeping its insertion position. Dimensions must match
    /// the store; features must be finite.
    pub fn add_example(&mut self, example: LabeledExample) -> Result<(), RagError> {
        example.features.check_finite()?;
        if let Some(existing) = self.examples.first() {
            if existing.features.dim() != example.features.dim() {
                return Err(RagError::DimensionMismatch {
                    expected: existing.features.dim(),
                    got: example.features.dim(),
                });
            }
        }
        if example.id.is_empty() {
            return Err(RagError::InvalidArgument("example id must not be empty".into()));
        }
        match self.examples.iter_mut().find(|e| e.id == example.id) {
            Some(slot) => *slot = example,
            None => self.examples.push(example),
        }
        Ok(())
    }

    /// Per-dimension mean and population standard deviation over the raw
    /// stored features. Identity (μ = 0, σ = 1) when fewer than two
    /// examples are stored.
    fn normalization_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let dim = self.examples.first().map_or(0, |e| e.features.dim());
        if self.examples.len() < 2 {
            return (vec![0.0; dim], vec![1.0; dim]);
        }
        let n = self.examples.len() as f64;
        let mut mean = vec![0.0; dim];
        for e in &self.examples {
            for (m, v) in mean.iter_mut().zip(&e.features.0) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut std = vec![0.0; dim];
        for e in &self.examples {
            for ((s, v), m) in std.iter_mut().zip(&e.features.0).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        (mean, std)
    }

    fn normalize(&self, raw: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(mean)
            .zip(std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Featurizes a cluster digest and z-normalizes it with the current
    /// store statistics, ready for [`retrieve`](Self::retrieve).
    pub fn featurize_cluster(&self, digest: &ClusterDigest) -> FeatureVector {
        let raw = raw_cluster_features(digest);
        let (mean, std) = self.normalization_stats_for(raw.0.len());
        FeatureVector(self.normalize(&raw.0, &mean, &std))
    }

    /// Featurizes a node digest the same way.
    pub fn featurize_node(&self, digest: &NodeDigest) -> FeatureVector {
        let raw = raw_node_features(digest);
        let (mean, std) = self.normalization_stats_for(raw.0.len());
        FeatureVector(self.normalize(&raw.0, &mean, &std))
    }

    fn normalization_stats_for(&self, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let (mean, std) = self.normalization_stats();
        if mean.len() == dim {
            (mean, std)
        } else {
            // Dimension disagreement is reported at retrieval; use identity
            // here so featurization itself stays total.
            (vec![0.0; dim], vec![1.0; dim])
        }
    }

    /// Retrieves the `k` most similar examples by cosine similarity in the
    /// normalized feature space, optionally restricted by label. Ties and
    /// equal scores preserve insertion order (the scan is order-stable).
    pub fn retrieve(
        &self,
        query: &FeatureVector,
        k: usize,
        filter: Option<LabelFilter>,
    ) -> Result<Vec<(&LabeledExample, f64)>, RagError> {
        if self.examples.is_empty() {
            return Err(RagError::EmptyStore);
        }
        if k == 0 {
            return Err(RagError::InvalidArgument("k must be at least 1".into()));
        }
        query.check_finite()?;
        let dim = self.examples[0].features.dim();
        if query.dim() != dim {
            return Err(RagError::DimensionMismatch {
                expected: dim,
                got: query.dim(),
            });
        }
        let (mean, std) = self.normalization_stats();
        let mut scored: Vec<(&LabeledExample, f64)> = self
            .examples
            .iter()
            .filter(|e| filter.as_ref().map_or(true, |f| f.admits(&e.label)))
            .map(|e| {
                let normalized = self.normalize(&e.features.0, &mean, &std);
                (e, cosine(&query.0, &normalized))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored)
    }

    /// Serializes the store as JSONL, one example per line, insertion order.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), RagError> {
        let mut file = std::fs::File::create(path)?;
        for example in &self.examples {
            let line = serde_json::to_string(example)
                .map_err(|e| RagError::InvalidArgument(format!("serialize: {e}")))?;
            file.write_all(line.as_bytes())?;
            file.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses a store from JSONL text; errors carry 1-based line numbers.
    pub fn from_jsonl_str(text: &str) -> Result<Self, RagError> {
        let mut store = ExampleStore::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let example: LabeledExample =
                serde_json::from_str(line).map_err(|e| RagError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            store.add_example(example).map_err(|e| RagError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(store)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, RagError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_jsonl_str(&text)
    }
}

/// Cosine similarity; zero-magnitude vectors score 0 against everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn series_block(stats: &BTreeMap<String, SeriesStats>, out: &mut Vec<f64>) {
    for s in stats.values() {
        out.push(s.mean);
        out.push(s.std);
        out.push(s.max_abs_z);
        out.push(s.slope);
    }
}

fn log_block(entry_count: u64, run_count: usize, error_count: u64, counts: &BTreeMap<String, u64>, out: &mut Vec<f64>) {
    out.push(entry_count as f64);
    out.push(run_count as f64);
    out.push(if entry_count == 0 {
        0.0
    } else {
        error_count as f64 / entry_count as f64
    });
    // Top-3 pattern frequencies, descending count, pattern string on ties.
    let mut by_count: Vec<(&String, &u64)> = counts.iter().collect();
    by_count.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    for i in 0..3 {
        out.push(by_count.get(i).map_or(0.0, |(_, c)| **c as f64));
    }
}

/// Raw (un-normalized) features of a cluster digest:
///
/// * per series name (sorted union over nodes): max-over-nodes mean, std,
///   and `max_abs_z`, plus the slope of largest magnitude;
/// * log block: total entries, total runs, error rate, top-3 pattern counts;
/// * trace block: errored-trace fraction and p95 trace duration.
pub fn raw_cluster_features(digest: &ClusterDigest) -> FeatureVector {
    let mut names: Vec<&String> = digest
        .per_node
        .iter()
        .flat_map(|d| d.series_stats.keys())
        .collect();
    names.sort();
    names.dedup();
    let mut out = Vec::new();
    for name in names {
        let mut agg = SeriesStats::default();
        for d in &digest.per_node {
            if let Some(s) = d.series_stats.get(name) {
                agg.mean = agg.mean.max(s.mean);
                agg.std = agg.std.max(s.std);
                agg.max_abs_z = agg.max_abs_z.max(s.max_abs_z);
                if s.slope.abs() > agg.slope.abs() {
                    agg.slope = s.slope;
                }
            }
        }
        out.push(agg.mean);
        out.push(agg.std);
        out.push(agg.max_abs_z);
        out.push(agg.slope);
    }
    let entry_count: u64 = digest.per_node.iter().map(|d| d.log_stats.entry_count).sum();
    let run_count: usize = digest.per_node.iter().map(|d| d.log_runs.runs.len()).sum();
    let error_count: u64 = digest.per_node.iter().map(|d| d.log_stats.error_count).sum();
    let mut merged: BTreeMap<String, u64> = BTreeMap::new();
    for d in &digest.per_node {
        for (pattern, count) in &d.log_stats.template_counts {
            *merged.entry(pattern.clone()).or_default() += count;
        }
    }
    log_block(entry_count, run_count, error_count, &merged, &mut out);

    let n_traces = digest.trace_links.len();
    out.push(if n_traces == 0 {
        0.0
    } else {
        digest.trace_links.iter().filter(|t| t.error).count() as f64 / n_traces as f64
    });
    out.push(p95(digest.trace_links.iter().map(|t| t.total_duration)));
    FeatureVector(out)
}

/// Raw features of one node digest: the same layout as the cluster vector
/// but over this node only, with zeros in the trace block.
pub fn raw_node_features(digest: &NodeDigest) -> FeatureVector {
    let mut out = Vec::new();
    series_block(&digest.series_stats, &mut out);
    log_block(
        digest.log_stats.entry_count,
        digest.log_runs.runs.len(),
        digest.log_stats.error_count,
        &digest.log_stats.template_counts,
        &mut out,
    );
    out.push(0.0);
    out.push(0.0);
    FeatureVector(out)
}

/// Nearest-rank p95 of a duration sample; 0 for an empty sample.
fn p95(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
