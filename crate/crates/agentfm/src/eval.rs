//! Offline evaluation: precision/recall/F1 scoring of pipeline output
//! against ground truth, and a DTW-based identifiability experiment that
//! asks which fault types a single telemetry channel can tell apart.
//!
//! The identifiability experiment reduces every fault window to one channel
//! — per-series maxima across nodes (metrics) or per-template counts in 10 s
//! bins (logs) — and runs leave-one-out 1-nearest-neighbor classification
//! under dynamic time warping. A fault type whose one-vs-rest F1 exceeds
//! 0.5 counts as identifiable through that channel.

use crate::log_agent::TemplateMiner;
use crate::metric_agent::{preprocess, PreprocessConfig};
use crate::simulator::GroundTruth;
use crate::tasks::{DiagnosisLabel, FaultLabel};
use crate::telemetry::TelemetryBundle;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Errors raised by scoring and the identifiability experiment.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    /// Predictions and ground truth disagree on the window set, or a
    /// channel is empty.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// Not enough data for the requested computation (e.g. a fault label
    /// with fewer than two windows under leave-one-out).
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let denom = precision + recall;
    if denom > 0.0 {
        2.0 * precision * recall / denom
    } else {
        0.0
    }
}

/// Binary classification counts and the derived rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Derives rates from counts; empty denominators yield 0, never NaN.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Metrics {
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        Metrics {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Scores binary anomaly detection. `verdicts` maps window start seconds to
/// the predicted anomaly flag and must cover exactly the truth's windows.
pub fn score_detection(
    truth: &GroundTruth,
    verdicts: &BTreeMap<u64, bool>,
) -> Result<Metrics, EvalError> {
    if truth.windows.is_empty() {
        return Err(EvalError::Alignment("ground truth has no windows".into()));
    }
    for start in verdicts.keys() {
        if !truth.windows.contains_key(start) {
            return Err(EvalError::Alignment(format!(
                "verdict for window {start} which is not in the ground truth"
            )));
        }
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (start, entry) in &truth.windows {
        let &predicted = verdicts.get(start).ok_or_else(|| {
            EvalError::Alignment(format!("no verdict for window {start}"))
        })?;
        match (entry.is_some(), predicted) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

/// Macro-averaged multi-class score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScore {
    /// One-vs-rest metrics per fault label present in the ground truth.
    pub per_class: BTreeMap<String, Metrics>,
    /// Unweighted means over the classes above.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores diagnosis labels against ground truth, macro-averaged over the
/// fault classes present in the truth.
///
/// `diagnoses` maps window starts to predicted labels; windows the pipeline
/// never diagnosed are simply absent (counting as misses for their true
/// class). `unknown` predictions are never correct for an injected fault.
pub fn score_diagnosis(
    truth: &GroundTruth,
    diagnoses: &BTreeMap<u64, DiagnosisLabel>,
) -> Result<MacroScore, EvalError> {
    for start in diagnoses.keys() {
        if !truth.windows.contains_key(start) {
            return Err(EvalError::Alignment(format!(
                "diagnosis for window {start} which is not in the ground truth"
            )));
        }
    }
    let classes: BTreeSet<FaultLabel> = truth
        .windows
        .values()
        .flatten()
        .map(|entry| entry.label)
        .collect();
    if classes.is_empty() {
        return Err(EvalError::Alignment(
            "ground truth contains no fault windows".into(),
        ));
    }
    let mut per_class = BTreeMap::new();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for class in &classes {
        let predicted_as = |start: &u64| diagnoses.get(start) == Some(&DiagnosisLabel::Known(*class));
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (start, entry) in &truth.windows {
            let truly = entry.as_ref().is_some_and(|e| e.label == *class);
            match (truly, predicted_as(start)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let metrics = Metrics::from_counts(tp, fp, fn_);
        p_sum += metrics.precision;
        r_sum += metrics.recall;
        f_sum += metrics.f1;
        per_class.insert(class.as_str().to_string(), metrics);
    }
    let n = classes.len() as f64;
    Ok(MacroScore {
        per_class,
        precision: p_sum / n,
        recall: r_sum / n,
        f1: f_sum / n,
    })
}

/// Dynamic time warping distance with absolute-difference local cost.
///
/// Classic DP over a rolling row: `d(i,j) = |a_i − b_j| + min(d(i−1,j),
/// d(i,j−1), d(i−1,j−1))`, boundary `d(0,0) = 0`.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Alignment(
            "dtw requires non-empty sequences".into(),
        ));
    }
    let mut prev = vec![f64::INFINITY; b.len() + 1];
    prev[0] = 0.0;
    let mut cur = vec![f64::INFINITY; b.len() + 1];
    for &x in a {
        cur[0] = f64::INFINITY;
        for (j, &y) in b.iter().enumerate() {
            let cost = (x - y).abs();
            cur[j + 1] = cost + prev[j + 1].min(cur[j]).min(prev[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[b.len()])
}

/// A telemetry channel for the identifiability experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Metrics,
    Logs,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::Metrics => "metrics",
            Channel::Logs => "logs",
        })
    }
}

/// Width of the log-count bins, in seconds.
const LOG_BIN_SECONDS: f64 = 10.0;

/// Reduces one window's bundles to named sequences for one channel.
///
/// Metrics: per series name, the element-wise maximum across nodes (the
/// loudest node defines the cluster's shape). Logs: per mined template
/// pattern, event counts in 10 s bins summed across nodes.
pub fn window_series(
    bundles: &[TelemetryBundle],
    channel: Channel,
) -> Result<BTreeMap<String, Vec<f64>>, EvalError> {
    let Some(first) = bundles.first() else {
        return Err(EvalError::Alignment("window has no bundles".into()));
    };
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    match channel {
        Channel::Metrics => {
            for bundle in bundles {
                let dense = preprocess(&bundle.metrics, &PreprocessConfig::default())
                    .map_err(|e| EvalError::Alignment(e.to_string()))?;
                for series in dense.series {
                    let slot = out.entry(series.name).or_default();
                    for (i, v) in series.values.into_iter().enumerate() {
                        if i < slot.len() {
                            slot[i] = slot[i].max(v);
                        } else {
                            slot.push(v);
                        }
                    }
                }
            }
        }
        Channel::Logs => {
            let window = first.window;
            let bins = ((window.end() - window.start()) / LOG_BIN_SECONDS).ceil() as usize;
            let bins = bins.max(1);
            for bundle in bundles {
                let mut miner = TemplateMiner::new();
                let parsed: Vec<(u64, f64)> = bundle
                    .logs
                    .entries
                    .iter()
                    .map(|e| (miner.parse_log(e).template_id, e.timestamp))
                    .collect();
                // Patterns can still evolve while later entries arrive, so
                // resolve ids to text only after the whole window is mined.
                let templates = miner.templates();
                for (id, ts) in parsed {
                    let pattern = &templates[&id].pattern;
                    let bin = (((ts - window.start()) / LOG_BIN_SECONDS) as usize).min(bins - 1);
                    out.entry(pattern.clone()).or_insert_with(|| vec![0.0; bins])[bin] += 1.0;
                }
            }
        }
    }
    Ok(out)
}

/// Distance between two channel reductions: the sum of per-key DTW
/// distances over the union of keys, with an all-zeros sequence standing in
/// for a missing key. A template that only fires in one window is evidence,
/// not an alignment error.
pub fn channel_distance(
    query: &BTreeMap<String, Vec<f64>>,
    reference: &BTreeMap<String, Vec<f64>>,
) -> Result<f64, EvalError> {
    if query.is_empty() {
        return Err(EvalError::Alignment("query channel is empty".into()));
    }
    let keys: BTreeSet<&String> = query.keys().chain(reference.keys()).collect();
    let mut total = 0.0;
    for key in keys {
        let q = query.get(key);
        let r = reference.get(key);
        let zeros_like =
            |other: &Vec<f64>| vec![0.0; other.len()];
        match (q, r) {
            (Some(q), Some(r)) => total += dtw_distance(q, r)?,
            (Some(q), None) => total += dtw_distance(q, &zeros_like(q))?,
            (None, Some(r)) => total += dtw_distance(&zeros_like(r), r)?,
            (None, None) => unreachable!("key came from one of the maps"),
        }
    }
    Ok(total)
}

/// 1-nearest-neighbor classification by channel distance. Exact distance
/// ties break toward the alphabetically smaller label.
pub fn dtw_classify(
    query: &BTreeMap<String, Vec<f64>>,
    references: &[(FaultLabel, BTreeMap<String, Vec<f64>>)],
) -> Result<FaultLabel, EvalError> {
    if references.is_empty() {
        return Err(EvalError::InsufficientData(
            "classification needs at least one reference".into(),
        ));
    }
    let mut best: Option<(f64, FaultLabel)> = None;
    for (label, reference) in references {
        let distance = channel_distance(query, reference)?;
        let better = match &best {
            None => true,
            Some((best_distance, best_label)) => {
                distance < *best_distance
                    || (distance == *best_distance && label.as_str() < best_label.as_str())
            }
        };
        if better {
            best = Some((distance, *label));
        }
    }
    Ok(best.expect("references is non-empty").1)
}

/// Identifiability of one fault type through one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityRow {
    pub label: FaultLabel,
    pub metrics: Metrics,
    /// F1 above 0.5: this channel alone can tell the fault apart.
    pub identifiable: bool,
}

/// Result of the per-channel identifiability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub channel: Channel,
    pub rows: Vec<IdentifiabilityRow>,
}

/// Leave-one-out 1-NN over all fault windows of a dataset, reduced to
/// `channel`. Every fault label needs at least two windows so each query
/// still has an in-class reference. Normal windows are not classified: the
/// experiment isolates *identification*, not detection.
///
/// Before classification every channel key is divided by the standard
/// deviation of its values over the whole fault-window population, so a
/// ratio-valued series and a throughput-valued one weigh alike in the
/// distance. Scaling — rather than full z-normalization — preserves zero,
/// which is what a window reports for a log template it never emitted, and
/// uses no label information.
pub fn identifiability_experiment(
    windows: &[(crate::telemetry::Window, Vec<TelemetryBundle>)],
    truth: &GroundTruth,
    channel: Channel,
) -> Result<IdentifiabilityReport, EvalError> {
    let mut labeled: Vec<(FaultLabel, BTreeMap<String, Vec<f64>>)> = Vec::new();
    for (window, bundles) in windows {
        let start = window.start() as u64;
        let Some(entry) = truth.windows.get(&start) else {
            return Err(EvalError::Alignment(format!(
                "window {start} is missing from the ground truth"
            )));
        };
        if let Some(entry) = entry {
            labeled.push((entry.label, window_series(bundles, channel)?));
        }
    }
    let mut counts: BTreeMap<FaultLabel, usize> = BTreeMap::new();
    for (label, _) in &labeled {
        *counts.entry(*label).or_default() += 1;
    }
    if labeled.is_empty() {
        return Err(EvalError::InsufficientData("no fault windows".into()));
    }
    for (label, count) in &counts {
        if *count < 2 {
            return Err(EvalError::InsufficientData(format!(
                "label {label} has {count} window(s); leave-one-out needs at least 2"
            )));
        }
    }

    let scales: BTreeMap<String, f64> = {
        let mut moments: BTreeMap<&str, (f64, f64, u64)> = BTreeMap::new();
        for (_, series) in &labeled {
            for (key, values) in series {
                let (sum, sum_sq, n) = moments.entry(key.as_str()).or_default();
                for v in values {
                    *sum += v;
                    *sum_sq += v * v;
                    *n += 1;
                }
            }
        }
        moments
            .into_iter()
            .map(|(key, (sum, sum_sq, n))| {
                let n = n as f64;
                let std = (sum_sq / n - (sum / n).powi(2)).max(0.0).sqrt();
                (key.to_string(), if std > 1e-9 { std } else { 1.0 })
            })
            .collect()
    };
    for (_, series) in &mut labeled {
        for (key, values) in series.iter_mut() {
            let scale = scales[key.as_str()];
            for v in values.iter_mut() {
                *v /= scale;
            }
        }
    }

    let predictions: Vec<(FaultLabel, FaultLabel)> = labeled
        .par_iter()
        .enumerate()
        .map(|(i, (label, query))| {
            let references: Vec<(FaultLabel, BTreeMap<String, Vec<f64>>)> = labeled
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r.clone())
                .collect();
            dtw_classify(query, &references).map(|predicted| (*label, predicted))
        })
        .collect::<Result<_, _>>()?;

    let rows = FaultLabel::ALL
        .into_iter()
        .filter(|label| counts.contains_key(label))
        .map(|label| {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (truly, predicted) in &predictions {
                match (*truly == label, *predicted == label) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let metrics = Metrics::from_counts(tp, fp, fn_);
            IdentifiabilityRow {
                label,
                identifiable: metrics.f1 > 0.5,
                metrics,
            }
        })
        .collect();
    Ok(IdentifiabilityReport { channel, rows })
}
