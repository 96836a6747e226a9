//! JSONL serialization of [`TelemetryBundle`].
//!
//! A bundle file is one JSON object per line, discriminated by a `kind` tag:
//!
//! ```text
//! {"kind":"header","node":"n1","window":[0.0,60.0]}
//! {"kind":"metric","node":"n1","name":"cpu_usage","ts":[0.0,5.0],"vals":[0.2,null]}
//! {"kind":"log","node":"n1","ts":12.5,"level":"INFO","msg":"wrote 4096 bytes to tablet 3"}
//! {"kind":"span","trace":"t1","span":"s1","parent":null,"node":"n1","op":"write","start":12.5,"dur":0.03,"status":"ok"}
//! ```
//!
//! The header must come first and appear exactly once; records keep their
//! file order. `save_bundle` followed by `load_bundle` reproduces the bundle
//! exactly, including `None` metric values.

use super::{
    LogEntry, LogLevel, MetricSeries, SpanStatus, TelemetryBundle, TelemetryError, TraceSpan,
    Window, DEFAULT_WINDOW_SECS,
};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One line of a bundle file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Header {
        node: String,
        window: Window,
    },
    Metric {
        node: String,
        name: String,
        ts: Vec<f64>,
        vals: Vec<Option<f64>>,
    },
    Log {
        node: String,
        ts: f64,
        level: LogLevel,
        msg: String,
    },
    Span {
        trace: String,
        span: String,
        parent: Option<String>,
        node: String,
        op: String,
        start: f64,
        dur: f64,
        status: SpanStatus,
    },
}

/// Parses a bundle from JSONL text. Errors carry the 1-based line number of
/// the offending record; semantic problems surface as validation errors.
///
/// An input with no records at all yields an empty bundle for node `""` over
/// `[0, DEFAULT_WINDOW_SECS)`.
pub fn parse_bundle_str(text: &str) -> Result<TelemetryBundle, TelemetryError> {
    let mut bundle: Option<TelemetryBundle> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(line).map_err(|e| TelemetryError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        match record {
            Record::Header { node, window } => {
                if bundle.is_some() {
                    return Err(TelemetryError::Parse {
                        line: line_no,
                        message: "duplicate header record".into(),
                    });
                }
                bundle = Some(TelemetryBundle::empty(&node, window));
            }
            other => {
                let bundle = bundle.as_mut().ok_or(TelemetryError::Parse {
                    line: line_no,
                    message: "expected a header record before telemetry records".into(),
                })?;
                match other {
                    Record::Header { .. } => unreachable!("handled above"),
                    Record::Metric {
                        node,
                        name,
                        ts,
                        vals,
                    } => {
                        if node != bundle.node_id {
                            return Err(TelemetryError::Parse {
                                line: line_no,
                                message: format!(
                                    "metric record for node {:?} in bundle of {:?}",
                                    node, bundle.node_id
                                ),
                            });
                        }
                        bundle.metrics.series.push(MetricSeries {
                            name,
                            timestamps: ts,
                            values: vals,
                        });
                    }
                    Record::Log {
                        node,
                        ts,
                        level,
                        msg,
                    } => {
                        if node != bundle.node_id {
                            return Err(TelemetryError::Parse {
                                line: line_no,
                                message: format!(
                                    "log record for node {:?} in bundle of {:?}",
                                    node, bundle.node_id
                                ),
                            });
                        }
                        bundle.logs.entries.push(LogEntry {
                            timestamp: ts,
                            level,
                            message: msg,
                        });
                    }
                    Record::Span {
                        trace,
                        span,
                        parent,
                        node,
                        op,
                        start,
                        dur,
                        status,
                    } => {
                        bundle.spans.push(TraceSpan {
                            trace_id: trace,
                            span_id: span,
                            parent_span_id: parent,
                            node_id: node,
                            operation: op,
                            start,
                            duration: dur,
                            status,
                        });
                    }
                }
            }
        }
    }
    let bundle = match bundle {
        Some(b) => b,
        None => TelemetryBundle::empty("", Window::new(0.0, DEFAULT_WINDOW_SECS)?),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Renders a bundle as JSONL text (header, metrics, logs, spans, in order).
pub fn render_bundle_string(bundle: &TelemetryBundle) -> Result<String, TelemetryError> {
    bundle.validate()?;
    let mut out = String::new();
    let mut push = |record: &Record| {
        out.push_str(&serde_json::to_string(record).expect("record serialization is infallible"));
        out.push('\n');
    };
    push(&Record::Header {
        node: bundle.node_id.clone(),
        window: bundle.window,
    });
    for series in &bundle.metrics.series {
        push(&Record::Metric {
            node: bundle.node_id.clone(),
            name: series.name.clone(),
            ts: series.timestamps.clone(),
            vals: series.values.clone(),
        });
    }
    for entry in &bundle.logs.entries {
        push(&Record::Log {
            node: bundle.node_id.clone(),
            ts: entry.timestamp,
            level: entry.level,
            msg: entry.message.clone(),
        });
    }
    for span in &bundle.spans {
        push(&Record::Span {
            trace: span.trace_id.clone(),
            span: span.span_id.clone(),
            parent: span.parent_span_id.clone(),
            node: span.node_id.clone(),
            op: span.operation.clone(),
            start: span.start,
            dur: span.duration,
            status: span.status,
        });
    }
    Ok(out)
}

/// Loads and validates a bundle from a JSONL file.
pub fn load_bundle(path: &Path) -> Result<TelemetryBundle, TelemetryError> {
    let text = std::fs::read_to_string(path)?;
    parse_bundle_str(&text)
}

/// Writes a bundle as a JSONL file, replacing any existing file.
pub fn save_bundle(path: &Path, bundle: &TelemetryBundle) -> Result<(), TelemetryError> {
    let text = render_bundle_string(bundle)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
