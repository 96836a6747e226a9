//! Core telemetry model: metric series, log entries, trace spans, and the
//! windowed [`TelemetryBundle`] that groups one node's observations.
//!
//! Bundles are exchanged as JSONL files (see [`io`]); every downstream stage
//! (log mining, metric description, digest assembly, the simulator, and the
//! evaluation harness) consumes these types.

mod io;

pub use io::{load_bundle, parse_bundle_str, render_bundle_string, save_bundle};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Identifier of a cluster node, e.g. `"n3"`.
pub type NodeId = String;

/// Window length (seconds) assumed when a bundle file carries no header.
pub const DEFAULT_WINDOW_SECS: f64 = 60.0;

/// Errors raised by telemetry construction, partitioning, and bundle I/O.
#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    /// A caller-supplied argument is out of range or inconsistent.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A bundle line did not match the JSONL schema.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// A structurally valid bundle violated a semantic constraint.
    #[error("validation error in {field}: {message}")]
    Validation { field: String, message: String },
    /// Underlying filesystem failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Window {
    start: f64,
    end: f64,
}

impl Window {
    /// Builds a window, requiring finite bounds with `end > start`.
    pub fn new(start: f64, end: f64) -> Result<Self, TelemetryError> {
        if !start.is_finite() || !end.is_finite() {
            return Err(TelemetryError::InvalidArgument(format!(
                "window bounds must be finite, got [{start}, {end})"
            )));
        }
        if end <= start {
            return Err(TelemetryError::InvalidArgument(format!(
                "window end must exceed start, got [{start}, {end})"
            )));
        }
        Ok(Window { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Membership test over the half-open interval.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }

    /// Canonical rendering used in digests and prompts, e.g. `[120s, 180s)`.
    pub fn label(&self) -> String {
        format!("[{}s, {}s)", self.start, self.end)
    }
}

impl TryFrom<(f64, f64)> for Window {
    type Error = TelemetryError;

    fn try_from(value: (f64, f64)) -> Result<Self, Self::Error> {
        Window::new(value.0, value.1)
    }
}

impl From<Window> for (f64, f64) {
    fn from(w: Window) -> Self {
        (w.start, w.end)
    }
}

/// Splits `[start, end)` into windows of `length` seconds placed every
/// `stride` seconds. The final window is truncated at `end`, so the windows
/// always cover the full interval; they overlap when `stride < length`.
pub fn window_partition(
    start: f64,
    end: f64,
    length: f64,
    stride: f64,
) -> Result<Vec<Window>, TelemetryError> {
    if !start.is_finite() || !end.is_finite() || end <= start {
        return Err(TelemetryError::InvalidArgument(format!(
            "interval bounds must be finite with end > start, got [{start}, {end})"
        )));
    }
    if !(length > 0.0) || !(stride > 0.0) || !length.is_finite() || !stride.is_finite() {
        return Err(TelemetryError::InvalidArgument(format!(
            "length and stride must be positive and finite, got {length} / {stride}"
        )));
    }
    let count = (end - start) / stride;
    if count > 10_000_000.0 {
        return Err(TelemetryError::InvalidArgument(format!(
            "partition would produce {count:.0} windows; refusing"
        )));
    }
    let mut windows = Vec::new();
    let mut i = 0u64;
    loop {
        let s = start + i as f64 * stride;
        if s >= end {
            break;
        }
        windows.push(Window::new(s, (s + length).min(end))?);
        i += 1;
    }
    Ok(windows)
}

/// Severity of a log entry, ordered `Debug < Info < Warn < Error`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogLevel {
    Debug,
    Info,
    Warn,
    Error,
}

impl std::fmt::Display for LogLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LogLevel::Debug => "DEBUG",
            LogLevel::Info => "INFO",
            LogLevel::Warn => "WARN",
            LogLevel::Error => "ERROR",
        };
        f.write_str(s)
    }
}

/// One named metric sampled over a window. `values[i]` is `None` where the
/// collector dropped the sample; imputation lives in the metric agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub timestamps: Vec<f64>,
    pub values: Vec<Option<f64>>,
}

/// All metric series reported by one node for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMetricSet {
    pub node_id: NodeId,
    pub series: Vec<MetricSeries>,
}

/// One log line with its timestamp and severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp: f64,
    pub level: LogLevel,
    pub message: String,
}

/// Time-ordered log entries from one node for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSequence {
    pub node_id: NodeId,
    pub entries: Vec<LogEntry>,
}

/// Terminal status of a span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanStatus {
    Ok,
    Error,
}

/// One span of a distributed trace, reported by the node that executed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpan {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub node_id: NodeId,
    pub operation: String,
    pub start: f64,
    pub duration: f64,
    pub status: SpanStatus,
}

/// Everything one node observed during one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryBundle {
    pub node_id: NodeId,
    pub window: Window,
    pub metrics: RawMetricSet,
    pub logs: LogSequence,
    pub spans: Vec<TraceSpan>,
}

impl TelemetryBundle {
    /// An empty bundle for `node_id` over `window`.
    pub fn empty(node_id: &str, window: Window) -> Self {
        TelemetryBundle {
            node_id: node_id.to_string(),
            window,
            metrics: RawMetricSet {
                node_id: node_id.to_string(),
                series: Vec::new(),
            },
            logs: LogSequence {
                node_id: node_id.to_string(),
                entries: Vec::new(),
            },
            spans: Vec::new(),
        }
    }

    /// Checks the bundle invariants: consistent node ids, unique series
    /// names, aligned and ordered timestamps inside the window, finite
    /// numbers, and non-empty log messages.
    pub fn validate(&self) -> Result<(), TelemetryError> {
        let fail = |field: &str, message: String| {
            Err(TelemetryError::Validation {
                field: field.to_string(),
                message,
            })
        };
        if self.metrics.node_id != self.node_id {
            return fail(
                "metrics.node_id",
                format!(
                    "expected {:?}, got {:?}",
                    self.node_id, self.metrics.node_id
                ),
            );
        }
        if self.logs.node_id != self.node_id {
            return fail(
                "logs.node_id",
                format!("expected {:?}, got {:?}", self.node_id, self.logs.node_id),
            );
        }
        let mut names = BTreeSet::new();
        for series in &self.metrics.series {
            if !names.insert(series.name.as_str()) {
                return fail(
                    "metrics.series",
                    format!("duplicate series name {:?}", series.name),
                );
            }
            if series.timestamps.len() != series.values.len() {
                return fail(
                    "metrics.series",
                    format!(
                        "series {:?} has {} timestamps but {} values",
                        series.name,
                        series.timestamps.len(),
                        series.values.len()
                    ),
                );
            }
            let mut prev = f64::NEG_INFINITY;
            for (i, &ts) in series.timestamps.iter().enumerate() {
                if !ts.is_finite() || !self.window.contains(ts) {
                    return fail(
                        "metrics.series",
                        format!(
                            "series {:?} timestamp {ts} (index {i}) outside window {}",
                            series.name,
                            self.window.label()
                        ),
                    );
                }
                if ts <= prev {
                    return fail(
                        "metrics.series",
                        format!(
                            "series {:?} timestamps not strictly increasing at index {i}",
                            series.name
                        ),
                    );
                }
                prev = ts;
                if let Some(v) = series.values[i] {
                    if !v.is_finite() {
                        return fail(
                            "metrics.series",
                            format!("series {:?} has non-finite value at index {i}", series.name),
                        );
                    }
                }
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, entry) in self.logs.entries.iter().enumerate() {
            if !entry.timestamp.is_finite() || !self.window.contains(entry.timestamp) {
                return fail(
                    "logs.entries",
                    format!(
                        "entry {i} timestamp {} outside window {}",
                        entry.timestamp,
                        self.window.label()
                    ),
                );
            }
            if entry.timestamp < prev {
                return fail(
                    "logs.entries",
                    format!("entry {i} breaks non-decreasing timestamp order"),
                );
            }
            prev = entry.timestamp;
            if entry.message.is_empty() {
                return fail("logs.entries", format!("entry {i} has an empty message"));
            }
        }
        let mut span_ids = BTreeSet::new();
        for (i, span) in self.spans.iter().enumerate() {
            if span.node_id != self.node_id {
                return fail(
                    "spans",
                    format!(
                        "span {:?} (index {i}) reported by node {:?}, bundle belongs to {:?}",
                        span.span_id, span.node_id, self.node_id
                    ),
                );
            }
            if !span_ids.insert((span.trace_id.as_str(), span.span_id.as_str())) {
                return fail(
                    "spans",
                    format!(
                        "duplicate span id {:?} in trace {:?}",
                        span.span_id, span.trace_id
                    ),
                );
            }
            if !span.start.is_finite() || !self.window.contains(span.start) {
                return fail(
                    "spans",
                    format!(
                        "span {:?} start {} outside window {}",
                        span.span_id,
                        span.start,
                        self.window.label()
                    ),
                );
            }
            if !span.duration.is_finite() || span.duration < 0.0 {
                return fail(
                    "spans",
                    format!("span {:?} has invalid duration {}", span.span_id, span.duration),
                );
            }
        }
        Ok(())
    }
}
