//! Per-node metric agent: imputation, optional denoising, z-score anomaly
//! detection, trend classification, and natural-language description.
//!
//! Raw metric series arrive with holes (`None` values). [`preprocess`]
//! closes them by linear interpolation between observed neighbors (in time
//! space) and nearest-edge fill at the boundaries, then optionally applies a
//! centered moving median to series configured as noisy. Downstream,
//! [`detect_anomaly_points`] flags samples whose absolute z-score (sample
//! standard deviation, `n − 1`) reaches [`Z_THRESHOLD`], and
//! [`describe_metrics`] renders a deterministic description that a language
//! model may optionally rewrite — never the other way round: trends and
//! anomaly structure always come from the numeric pipeline.

use crate::llm::{ChatRequest, GatewayError, LlmClient};
use crate::telemetry::{NodeId, RawMetricSet, Window};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// System prompt for the optional description rewrite.
const DESCRIBE_SYSTEM_PROMPT: &str = include_str!("../../prompts/describe_system.txt");

/// Absolute z-score at which a sample counts as anomalous.
pub const Z_THRESHOLD: f64 = 3.0;

/// Window size of the moving-median denoiser (centered; shrinks at edges).
pub const MEDIAN_WINDOW: usize = 5;

/// Slope magnitude below which a normalized series counts as flat.
pub const TREND_EPSILON: f64 = 1e-9;

/// Coefficient-of-variation threshold above which a series is volatile.
pub const VOLATILITY_CV: f64 = 0.5;

/// Errors raised by the metric agent.
#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    /// Every value of the series is missing; nothing can be imputed.
    #[error("series {0:?} has no observed values to impute from")]
    Unimputable(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Preprocessing switches. Series named in `denoise` get the moving median.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub denoise: BTreeSet<String>,
}

/// A gap-free metric series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSeries {
    pub name: String,
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
}

/// What preprocessing did to one series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SeriesProvenance {
    pub imputed_count: usize,
    pub denoised: bool,
}

/// Imputed (and possibly denoised) metrics for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedMetricSet {
    pub node_id: NodeId,
    pub series: Vec<DenseSeries>,
    pub provenance: BTreeMap<String, SeriesProvenance>,
}

/// Linear interpolation between observed neighbors; nearest-edge fill
/// before the first and after the last observation.
fn impute(timestamps: &[f64], values: &[Option<f64>]) -> Option<(Vec<f64>, usize)> {
    let observed: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if observed.is_empty() {
        return if values.is_empty() {
            Some((Vec::new(), 0))
        } else {
            None
        };
    }
    let mut out = Vec::with_capacity(values.len());
    let mut imputed = 0usize;
    for i in 0..values.len() {
        if let Some(v) = values[i] {
            out.push(v);
            continue;
        }
        imputed += 1;
        let prev = observed.iter().rev().find(|&&j| j < i).copied();
        let next = observed.iter().find(|&&j| j > i).copied();
        let v = match (prev, next) {
            (Some(a), Some(b)) => {
                let (va, vb) = (values[a].unwrap(), values[b].unwrap());
                let (ta, tb) = (timestamps[a], timestamps[b]);
                if tb == ta {
                    va
                } else {
                    va + (vb - va) * (timestamps[i] - ta) / (tb - ta)
                }
            }
            (None, Some(b)) => values[b].unwrap(),
            (Some(a), None) => values[a].unwrap(),
            (None, None) => unreachable!("observed is non-empty"),
        };
        out.push(v);
    }
    Some((out, imputed))
}

/// Centered moving median with window [`MEDIAN_WINDOW`]; the window shrinks
/// near the edges. Even-sized windows average the two middle values.
fn moving_median(values: &[f64]) -> Vec<f64> {
    let half = MEDIAN_WINDOW / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut window: Vec<f64> = values[lo..hi].to_vec();
            window.sort_by(f64::total_cmp);
            let n = window.len();
            if n % 2 == 1 {
                window[n / 2]
            } else {
                (window[n / 2 - 1] + window[n / 2]) / 2.0
            }
        })
        .collect()
}

/// Imputes every series and denoises the configured ones.
///
/// Idempotent when denoising is off: preprocessing an already-dense set
/// changes nothing.
pub fn preprocess(
    raw: &RawMetricSet,
    config: &PreprocessConfig,
) -> Result<PreprocessedMetricSet, MetricError> {
    let mut series_out = Vec::with_capacity(raw.series.len());
    let mut provenance = BTreeMap::new();
    for series in &raw.series {
        if series.timestamps.len() != series.values.len() {
            return Err(MetricError::InvalidArgument(format!(
                "series {:?}: {} timestamps vs {} values",
                series.name,
                series.timestamps.len(),
                series.values.len()
            )));
        }
        let (mut values, imputed_count) = impute(&series.timestamps, &series.values)
            .ok_or_else(|| MetricError::Unimputable(series.name.clone()))?;
        let denoised = config.denoise.contains(&series.name);
        if denoised {
            values = moving_median(&values);
        }
        provenance.insert(
            series.name.clone(),
            SeriesProvenance {
                imputed_count,
                denoised,
            },
        );
        series_out.push(DenseSeries {
            name: series.name.clone(),
            timestamps: series.timestamps.clone(),
            values,
        });
    }
    Ok(PreprocessedMetricSet {
        node_id: raw.node_id.clone(),
        series: series_out,
        provenance,
    })
}

/// Mean and sample standard deviation (`n − 1` denominator).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// One sample flagged by the z-score detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyPoint {
    pub series_name: String,
    pub timestamp: f64,
    pub value: f64,
    /// Signed z-score; `|z_score| >= Z_THRESHOLD` by construction.
    pub z_score: f64,
}

/// Flags samples with `|v − mean| / std >= Z_THRESHOLD`. Series shorter
/// than two samples, or with zero variance, report nothing.
pub fn detect_anomaly_points(series: &DenseSeries) -> Vec<AnomalyPoint> {
    let (mean, std) = mean_and_std(&series.values);
    if std == 0.0 {
        return Vec::new();
    }
    series
        .values
        .iter()
        .zip(&series.timestamps)
        .filter_map(|(&v, &ts)| {
            let z = (v - mean) / std;
            (z.abs() >= Z_THRESHOLD).then(|| AnomalyPoint {
                series_name: series.name.clone(),
                timestamp: ts,
                value: v,
                z_score: z,
            })
        })
        .collect()
}

/// Qualitative direction of a series over the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Rising,
    Falling,
    Flat,
    Volatile,
}

impl std::fmt::Display for Trend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Trend::Rising => "rising",
            Trend::Falling => "falling",
            Trend::Flat => "flat",
            Trend::Volatile => "volatile",
        };
        f.write_str(s)
    }
}

/// Least-squares slope of `values` against sample index.
pub fn index_slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / nf;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (v - mean_y);
        den += dx * dx;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Classifies a series: volatility (coefficient of variation above
/// [`VOLATILITY_CV`]) overrides direction; otherwise the sign of the
/// least-squares slope of the min-max normalized series decides, with
/// [`TREND_EPSILON`] as the flat band.
pub fn trend_of(values: &[f64]) -> Trend {
    if values.len() < 2 {
        return Trend::Flat;
    }
    let (mean, std) = mean_and_std(values);
    if std > 0.0 {
        let cv = if mean == 0.0 {
            f64::INFINITY
        } else {
            std / mean.abs()
        };
        if cv > VOLATILITY_CV {
            return Trend::Volatile;
        }
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if max == min {
        return Trend::Flat;
    }
    let normalized: Vec<f64> = values.iter().map(|v| (v - min) / (max - min)).collect();
    let slope = index_slope(&normalized);
    if slope > TREND_EPSILON {
        Trend::Rising
    } else if slope < -TREND_EPSILON {
        Trend::Falling
    } else {
        Trend::Flat
    }
}

/// Natural-language description of one node's metrics over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlDescription {
    pub node_id: NodeId,
    pub window: Window,
    /// Human-readable text; deterministic unless a model rewrite succeeded.
    pub text: String,
    pub trends: BTreeMap<String, Trend>,
    pub anomalies: Vec<AnomalyPoint>,
    /// True when a model rewrite was requested but failed, leaving the
    /// deterministic text in place.
    pub degraded: bool,
}

fn deterministic_text(metrics: &PreprocessedMetricSet, window: Window) -> String {
    let mut text = format!(
        "node {} window {}: {} metric series.",
        metrics.node_id,
        window.label(),
        metrics.series.len()
    );
    let mut anomaly_notes: Vec<String> = Vec::new();
    for series in &metrics.series {
        let (mean, _) = mean_and_std(&series.values);
        let (min, max) = series
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let trend = trend_of(&series.values);
        if series.values.is_empty() {
            text.push_str(&format!(" {}: no samples.", series.name));
            continue;
        }
        text.push_str(&format!(
            " {}: trend {trend}, mean {mean:.3}, range [{min:.3}, {max:.3}].",
            series.name
        ));
        for point in detect_anomaly_points(series) {
            anomaly_notes.push(format!(
                "{} at {}s value {:.3} (z {:+.2})",
                point.series_name, point.timestamp, point.value, point.z_score
            ));
        }
    }
    if anomaly_notes.is_empty() {
        text.push_str(" anomalies: none.");
    } else {
        text.push_str(&format!(" anomalies: {}.", anomaly_notes.join("; ")));
    }
    text
}

/// Builds the description. When `llm` is given, the deterministic text is
/// offered for a concise rewrite; empty output or any gateway error keeps
/// the deterministic text (setting `degraded` on errors). Trends and
/// anomalies are always computed numerically.
pub fn describe_metrics(
    metrics: &PreprocessedMetricSet,
    window: Window,
    llm: Option<&dyn LlmClient>,
) -> NlDescription {
    let trends: BTreeMap<String, Trend> = metrics
        .series
        .iter()
        .map(|s| (s.name.clone(), trend_of(&s.values)))
        .collect();
    let anomalies: Vec<AnomalyPoint> = metrics
        .series
        .iter()
        .flat_map(detect_anomaly_points)
        .collect();
    let base = deterministic_text(metrics, window);
    let (text, degraded) = match llm {
        None => (base, false),
        Some(llm) => {
            let request = ChatRequest::text(
                DESCRIBE_SYSTEM_PROMPT,
                format!("Rewrite this metric report concisely, keeping every number:\n{base}"),
            );
            match llm.chat(&request) {
                Ok(response) => match response.text.map(|t| t.trim().to_string()) {
                    Some(t) if !t.is_empty() => (t, false),
                    _ => (base, false),
                },
                Err(err) => {
                    log_gateway_degradation("describe_metrics", &err);
                    (base, true)
                }
            }
        }
    };
    NlDescription {
        node_id: metrics.node_id.clone(),
        window,
        text,
        trends,
        anomalies,
        degraded,
    }
}

fn log_gateway_degradation(stage: &str, err: &GatewayError) {
    log::warn!("{stage}: language model unavailable, using deterministic text: {err}");
}
