//! Meta agent: collects per-node digests, integrates them with distributed
//! traces into a [`ClusterDigest`], aggregates node flags into a
//! role-weighted suspicion score, and drives the detection → diagnosis →
//! mitigation pipeline (see [`pipeline`]).

mod pipeline;

pub use pipeline::{run_pipeline, write_report, FailureReport, PipelineConfig, StageError};

use crate::log_agent::{
    compress_sequence, summarize_operations, OperationalSummary, RunSequence, TemplateMiner,
};
use crate::llm::LlmClient;
use crate::metric_agent::{
    describe_metrics, index_slope, mean_and_std, preprocess, MetricError, NlDescription,
    PreprocessConfig,
};
use crate::roles::{NodeRole, RoleTable};
use crate::telemetry::{LogLevel, NodeId, TelemetryBundle, TraceSpan, Window};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Role-weighted flag share above which a window is hinted as suspicious.
pub const SUSPICION_THRESHOLD: f64 = 0.25;

/// Default cap on operational summary elements per node.
pub const DEFAULT_SUMMARY_BUDGET: usize = 5;

/// Errors raised while assembling digests.
#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    /// Bundles disagree on windows or duplicate nodes.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// A bundle references a node absent from the role table.
    #[error("unknown node {0:?} in telemetry")]
    UnknownNode(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Boolean anomaly indicators contributed by one node's data agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeFlags {
    /// Some metric sample crossed the z-score threshold.
    pub metric_anomaly: bool,
    /// Some log entry was at ERROR level.
    pub error_logs: bool,
}

impl NodeFlags {
    pub fn any(&self) -> bool {
        self.metric_anomaly || self.error_logs
    }
}

/// Numeric summary of one dense metric series, kept for featurization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    /// Largest absolute z-score over the window (0 for constant series).
    pub max_abs_z: f64,
    /// Least-squares slope against sample index.
    pub slope: f64,
}

/// Counting summary of one node's logs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LogStats {
    pub entry_count: u64,
    pub error_count: u64,
    /// Events per mined pattern. Keyed by pattern text so counts are
    /// comparable across nodes despite per-node template ids.
    pub template_counts: BTreeMap<String, u64>,
}

/// Everything the meta agent keeps about one node for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDigest {
    pub node_id: NodeId,
    pub role: NodeRole,
    pub window: Window,
    pub nl_metrics: NlDescription,
    pub log_runs: RunSequence,
    pub log_summary: OperationalSummary,
    pub node_flags: NodeFlags,
    pub series_stats: BTreeMap<String, SeriesStats>,
    pub log_stats: LogStats,
}

/// One distributed trace reduced to its path and makespan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLink {
    pub trace_id: String,
    /// Nodes in order of first touch; each node appears once.
    pub node_path: Vec<NodeId>,
    /// Makespan: latest span end minus earliest span start.
    pub total_duration: f64,
    pub error: bool,
}

/// Cluster-wide digest for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDigest {
    pub window: Window,
    /// Per-node digests, ordered by node id.
    pub per_node: Vec<NodeDigest>,
    /// All traces touching the window, ordered by trace id.
    pub trace_links: Vec<TraceLink>,
    /// Narrative used in agent prompts.
    pub text: String,
    /// Non-fatal integration notes (e.g. spans naming unknown nodes).
    pub warnings: Vec<String>,
}

impl ClusterDigest {
    /// Returns a copy whose narrative carries the role-weighted suspicion
    /// hint. The hint is prompt context, not a verdict: detection still
    /// decides.
    pub fn with_suspicion_hint(&self, score: f64, suspicious: bool) -> ClusterDigest {
        let mut out = self.clone();
        out.text.push_str(&format!(
            "\nrole-weighted suspicion score {score:.3} (threshold {SUSPICION_THRESHOLD}): {}",
            if suspicious {
                "flagged as suspicious"
            } else {
                "below threshold"
            }
        ));
        out
    }
}

/// Settings for digest collection.
#[derive(Debug, Clone, Default)]
pub struct CollectConfig {
    pub preprocess: PreprocessConfig,
    /// Cap on operational summary elements (0 means the default).
    pub summary_budget: usize,
}

impl CollectConfig {
    fn budget(&self) -> usize {
        if self.summary_budget == 0 {
            DEFAULT_SUMMARY_BUDGET
        } else {
            self.summary_budget
        }
    }
}

/// Builds one [`NodeDigest`] per bundle.
///
/// All bundles must share one window and carry distinct node ids present in
/// the role table. The metric description is always deterministic here; the
/// model (when given) is used for log summarization only, and transport
/// failures fall back to deterministic summaries rather than failing the
/// digest.
pub fn collect(
    bundles: &[TelemetryBundle],
    table: &RoleTable,
    llm: Option<&dyn LlmClient>,
    config: &CollectConfig,
) -> Result<Vec<NodeDigest>, MetaError> {
    let Some(first) = bundles.first() else {
        return Err(MetaError::InvalidArgument("no bundles to collect".into()));
    };
    let window = first.window;
    let mut seen = std::collections::BTreeSet::new();
    for bundle in bundles {
        if bundle.window != window {
            return Err(MetaError::Alignment(format!(
                "bundle for {:?} covers {} but {} was expected",
                bundle.node_id,
                bundle.window.label(),
                window.label()
            )));
        }
        if !seen.insert(bundle.node_id.clone()) {
            return Err(MetaError::Alignment(format!(
                "duplicate bundle for node {:?}",
                bundle.node_id
            )));
        }
    }

    let mut digests = Vec::with_capacity(bundles.len());
    for bundle in bundles {
        let role = table
            .roles
            .get(&bundle.node_id)
            .ok_or_else(|| MetaError::UnknownNode(bundle.node_id.clone()))?
            .clone();

        let dense = preprocess(&bundle.metrics, &config.preprocess)?;
        let nl_metrics = describe_metrics(&dense, window, None);

        let mut miner = TemplateMiner::new();
        let ids: Vec<_> = bundle
            .logs
            .entries
            .iter()
            .map(|e| miner.parse_log(e).template_id)
            .collect();
        let log_runs = compress_sequence(&ids);
        let log_summary = match summarize_operations(&log_runs, &miner, llm, config.budget()) {
            Ok(summary) => summary,
            Err(err) => {
                log::warn!(
                    "log summarization for {:?} failed ({err}); using deterministic summary",
                    bundle.node_id
                );
                summarize_operations(&log_runs, &miner, None, config.budget())
                    .expect("deterministic summarization cannot fail")
            }
        };

        let mut series_stats = BTreeMap::new();
        for series in &dense.series {
            let (mean, std) = mean_and_std(&series.values);
            let max_abs_z = if std > 0.0 {
                series
                    .values
                    .iter()
                    .map(|v| ((v - mean) / std).abs())
                    .fold(0.0, f64::max)
            } else {
                0.0
            };
            series_stats.insert(
                series.name.clone(),
                SeriesStats {
                    mean,
                    std,
                    max_abs_z,
                    slope: index_slope(&series.values),
                },
            );
        }

        let mut template_counts: BTreeMap<String, u64> = BTreeMap::new();
        for template in miner.templates().values() {
            *template_counts.entry(template.pattern.clone()).or_default() +=
                template.match_count;
        }
        let error_count = bundle
            .logs
            .entries
            .iter()
            .filter(|e| e.level == LogLevel::Error)
            .count() as u64;
        let log_stats = LogStats {
            entry_count: bundle.logs.entries.len() as u64,
            error_count,
            template_counts,
        };

        let node_flags = NodeFlags {
            metric_anomaly: !nl_metrics.anomalies.is_empty(),
            error_logs: error_count > 0,
        };

        digests.push(NodeDigest {
            node_id: bundle.node_id.clone(),
            role,
            window,
            nl_metrics,
            log_runs,
            log_summary,
            node_flags,
            series_stats,
            log_stats,
        });
    }
    digests.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    Ok(digests)
}

/// Builds [`TraceLink`]s from raw spans. Spans naming nodes outside
/// `known_nodes` are dropped and reported as warnings.
fn link_traces(
    spans: &[TraceSpan],
    known_nodes: &std::collections::BTreeSet<&str>,
    warnings: &mut Vec<String>,
) -> Vec<TraceLink> {
    let mut by_trace: BTreeMap<&str, Vec<&TraceSpan>> = BTreeMap::new();
    for span in spans {
        if !known_nodes.contains(span.node_id.as_str()) {
            warnings.push(format!(
                "span {:?} of trace {:?} references unknown node {:?}; dropped",
                span.span_id, span.trace_id, span.node_id
            ));
            continue;
        }
        by_trace.entry(&span.trace_id).or_default().push(span);
    }
    by_trace
        .into_iter()
        .map(|(trace_id, mut spans)| {
            spans.sort_by(|a, b| {
                a.start
                    .total_cmp(&b.start)
                    .then_with(|| a.span_id.cmp(&b.span_id))
            });
            let mut node_path: Vec<NodeId> = Vec::new();
            for span in &spans {
                if !node_path.contains(&span.node_id) {
                    node_path.push(span.node_id.clone());
                }
            }
            let start = spans
                .iter()
                .map(|s| s.start)
                .fold(f64::INFINITY, f64::min);
            let end = spans
                .iter()
                .map(|s| s.start + s.duration)
                .fold(f64::NEG_INFINITY, f64::max);
            TraceLink {
                trace_id: trace_id.to_string(),
                node_path,
                total_duration: (end - start).max(0.0),
                error: spans
                    .iter()
                    .any(|s| s.status == crate::telemetry::SpanStatus::Error),
            }
        })
        .collect()
}

/// Shortens a summary element for inline display in trace lines.
fn snippet(text: &str) -> String {
    const LIMIT: usize = 48;
    if text.chars().count() <= LIMIT {
        text.to_string()
    } else {
        let cut: String = text.chars().take(LIMIT).collect();
        format!("{cut}…")
    }
}

/// Integrates node digests and spans into a cluster digest.
///
/// The narrative lists each node (role, importance, flags, metric text,
/// operations) and then walks the top-5 slowest traces — duration
/// descending, trace id ascending on ties — interleaving each path node's
/// first summary element.
pub fn integrate_with_traces(
    digests: Vec<NodeDigest>,
    spans: &[TraceSpan],
) -> Result<ClusterDigest, MetaError> {
    let Some(first) = digests.first() else {
        return Err(MetaError::InvalidArgument(
            "cannot integrate zero digests".into(),
        ));
    };
    let window = first.window;
    for digest in &digests {
        if digest.window != window {
            return Err(MetaError::Alignment(format!(
                "digest for {:?} covers {} but {} was expected",
                digest.node_id,
                digest.window.label(),
                window.label()
            )));
        }
    }
    let known: std::collections::BTreeSet<&str> =
        digests.iter().map(|d| d.node_id.as_str()).collect();
    let mut warnings = Vec::new();
    let trace_links = link_traces(spans, &known, &mut warnings);

    let errored = trace_links.iter().filter(|t| t.error).count();
    let mut text = format!(
        "cluster window {}: {} nodes, {} traces ({} errored).",
        window.label(),
        digests.len(),
        trace_links.len(),
        errored
    );
    for digest in &digests {
        let flags = match (
            digest.node_flags.metric_anomaly,
            digest.node_flags.error_logs,
        ) {
            (true, true) => "metric_anomaly+error_logs",
            (true, false) => "metric_anomaly",
            (false, true) => "error_logs",
            (false, false) => "none",
        };
        text.push_str(&format!(
            "\n- {} [{} {}, importance {:.2}, {}] flags: {}. {} operations: {}",
            digest.node_id,
            digest.role.kind,
            digest.role.leadership,
            digest.role.importance,
            match digest.role.liveness {
                crate::roles::Liveness::Up => "up",
                crate::roles::Liveness::Down => "down",
            },
            flags,
            digest.nl_metrics.text,
            digest.log_summary.elements.join(" | ")
        ));
    }

    let mut slowest: Vec<&TraceLink> = trace_links.iter().collect();
    slowest.sort_by(|a, b| {
        b.total_duration
            .total_cmp(&a.total_duration)
            .then_with(|| a.trace_id.cmp(&b.trace_id))
    });
    let by_node: BTreeMap<&str, &NodeDigest> =
        digests.iter().map(|d| (d.node_id.as_str(), d)).collect();
    if !slowest.is_empty() {
        text.push_str("\nslowest traces:");
        for (rank, link) in slowest.iter().take(5).enumerate() {
            let mut line = format!(
                "\n{}. trace {} ({:.3}s, {}) path {}",
                rank + 1,
                link.trace_id,
                link.total_duration,
                if link.error { "error" } else { "ok" },
                link.node_path.join(" > ")
            );
            for node in &link.node_path {
                if let Some(digest) = by_node.get(node.as_str()) {
                    if let Some(element) = digest.log_summary.elements.first() {
                        line.push_str(&format!("; {node}: {}", snippet(element)));
                    }
                }
            }
            text.push_str(&line);
        }
    }
    if !warnings.is_empty() {
        text.push_str(&format!("\nwarnings: {}", warnings.join("; ")));
    }

    Ok(ClusterDigest {
        window,
        per_node: digests,
        trace_links,
        text,
        warnings,
    })
}

/// Role-weighted aggregation of node flags:
///
/// ```text
/// score = Σ importance(n) · flag(n) / Σ importance(n)
/// ```
///
/// where `flag(n)` is 1 when the node raised any flag. Returns
/// `(score > SUSPICION_THRESHOLD, score)`; an empty digest list scores 0.
pub fn aggregate_node_flags(digests: &[NodeDigest], table: &RoleTable) -> (bool, f64) {
    let mut weighted = 0.0;
    let mut total = 0.0;
    for digest in digests {
        let importance = table.importance_of(&digest.node_id);
        total += importance;
        if digest.node_flags.any() {
            weighted += importance;
        }
    }
    if total == 0.0 {
        return (false, 0.0);
    }
    let score = weighted / total;
    (score > SUSPICION_THRESHOLD, score)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockClient, MockScript, ScriptedResponse};
    use crate::roles::{bootstrap_roles, test_support::six_node_config};
    use crate::telemetry::{
        LogEntry, LogLevel, MetricSeries, SpanStatus, TelemetryBundle, TraceSpan, Window,
    };

    fn window() -> Window {
        Window::new(120.0, 180.0).unwrap()
    }

    fn bundle(node: &str) -> TelemetryBundle {
        let mut b = TelemetryBundle::empty(node, window());
        b.metrics.series.push(MetricSeries {
            name: "cpu_usage".into(),
            timestamps: (0..6).map(|i| 120.0 + 5.0 * i as f64).collect(),
            values: vec![Some(0.3), Some(0.31), None, Some(0.29), Some(0.3), Some(0.32)],
        });
        b.logs.entries.push(LogEntry {
            timestamp: 125.0,
            level: LogLevel::Info,
            message: format!("wrote 4096 bytes to tablet 3"),
        });
        b.logs.entries.push(LogEntry {
            timestamp: 126.0,
            level: LogLevel::Info,
            message: format!("wrote 128 bytes to tablet 9"),
        });
        b
    }

    fn table() -> crate::roles::RoleTable {
        bootstrap_roles(&six_node_config()).unwrap()
    }

    #[test]
    fn collect_builds_sorted_digests_with_stats() {
        let bundles = vec![bundle("n4"), bundle("n3")];
        let digests = collect(&bundles, &table(), None, &Default::default()).unwrap();
        assert_eq!(digests.len(), 2);
        assert_eq!(digests[0].node_id, "n3");
        assert_eq!(digests[1].node_id, "n4");
        let d = &digests[0];
        assert_eq!(d.role.importance, 1.25);
        assert_eq!(d.log_stats.entry_count, 2);
        assert_eq!(d.log_stats.error_count, 0);
        assert_eq!(
            d.log_stats.template_counts["wrote <*> bytes to tablet <*>"],
            2
        );
        assert!(d.series_stats.contains_key("cpu_usage"));
        assert!(d.series_stats["cpu_usage"].std > 0.0);
        assert!(!d.node_flags.any());
        assert_eq!(d.log_runs.source_len(), 2);
        assert!(d.nl_metrics.text.contains("cpu_usage"));
    }

    #[test]
    fn collect_rejects_misaligned_windows_and_duplicates() {
        let mut other = bundle("n4");
        other.window = Window::new(180.0, 240.0).unwrap();
        // Move timestamps into the new window so only alignment fails.
        other.metrics.series.clear();
        other.logs.entries.clear();
        let err = collect(&[bundle("n3"), other], &table(), None, &Default::default())
            .unwrap_err();
        assert!(matches!(err, MetaError::Alignment(_)));
        let err = collect(
            &[bundle("n3"), bundle("n3")],
            &table(),
            None,
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MetaError::Alignment(_)));
    }

    #[test]
    fn collect_rejects_unknown_nodes() {
        let err = collect(&[bundle("n9")], &table(), None, &Default::default()).unwrap_err();
        assert!(matches!(err, MetaError::UnknownNode(n) if n == "n9"));
    }

    #[test]
    fn collect_sets_flags_from_anomalies_and_errors() {
        let mut b = bundle("n3");
        // One extreme cpu sample and one ERROR entry.
        b.metrics.series[0].values = vec![Some(0.1); 6];
        b.metrics.series[0].values[5] = Some(50.0);
        // 6 samples: z of outlier ≈ 2.04 < 3 — use a longer series instead.
        b.metrics.series[0].timestamps = (0..16).map(|i| 120.0 + 3.0 * i as f64).collect();
        b.metrics.series[0].values = vec![Some(0.1); 16];
        b.metrics.series[0].values[15] = Some(50.0);
        b.logs.entries.push(LogEntry {
            timestamp: 170.0,
            level: LogLevel::Error,
            message: "export pipeline stalled on tablet 3".into(),
        });
        let digests = collect(&[b], &table(), None, &Default::default()).unwrap();
        assert!(digests[0].node_flags.metric_anomaly);
        assert!(digests[0].node_flags.error_logs);
        assert_eq!(digests[0].log_stats.error_count, 1);
    }

    #[test]
    fn collect_uses_model_for_summaries_and_survives_transport_failure() {
        let mut script = MockScript::default();
        script.script_response(
            "Log runs:",
            ScriptedResponse::text("- wrote bytes to tablets repeatedly"),
        );
        let client = MockClient::new(script);
        let digests =
            collect(&[bundle("n3")], &table(), Some(&client), &Default::default()).unwrap();
        assert!(digests[0].log_summary.from_model);
        assert_eq!(
            digests[0].log_summary.elements,
            vec!["wrote bytes to tablets repeatedly".to_string()]
        );

        let mut script = MockScript::default();
        script.script_response("Log runs:", ScriptedResponse::TransportError("down".into()));
        let client = MockClient::new(script);
        let digests =
            collect(&[bundle("n3")], &table(), Some(&client), &Default::default()).unwrap();
        assert!(!digests[0].log_summary.from_model);
        assert!(digests[0].log_summary.elements[0].contains("wrote <*> bytes"));
    }

    fn span(trace: &str, span_id: &str, node: &str, start: f64, dur: f64) -> TraceSpan {
        TraceSpan {
            trace_id: trace.into(),
            span_id: span_id.into(),
            parent_span_id: None,
            node_id: node.into(),
            operation: "write".into(),
            start,
            duration: dur,
            status: SpanStatus::Ok,
        }
    }

    #[test]
    fn integrate_links_traces_and_orders_narrative_by_duration() {
        let digests =
            collect(&[bundle("n2"), bundle("n5")], &table(), None, &Default::default()).unwrap();
        let spans = vec![
            span("t-slow", "s1", "n2", 130.0, 0.004),
            span("t-slow", "s2", "n5", 130.001, 5.0),
            span("t-fast", "s3", "n2", 140.0, 1.0),
        ];
        let digest = integrate_with_traces(digests, &spans).unwrap();
        assert_eq!(digest.trace_links.len(), 2);
        let slow = digest
            .trace_links
            .iter()
            .find(|t| t.trace_id == "t-slow")
            .unwrap();
        assert_eq!(slow.node_path, vec!["n2".to_string(), "n5".to_string()]);
        assert!((slow.total_duration - 5.001).abs() < 1e-9);
        // 5 s trace is listed before the 1 s trace.
        let slow_pos = digest.text.find("trace t-slow").unwrap();
        let fast_pos = digest.text.find("trace t-fast").unwrap();
        assert!(slow_pos < fast_pos);
        assert!(digest.text.starts_with("cluster window [120s, 180s): 2 nodes"));
        // Trace lines interleave the path nodes' summary snippets.
        assert!(digest.text.contains("path n2 > n5; n2:"));
        assert!(digest.warnings.is_empty());
    }

    #[test]
    fn integrate_warns_on_unknown_span_nodes() {
        let digests = collect(&[bundle("n2")], &table(), None, &Default::default()).unwrap();
        let spans = vec![
            span("t1", "s1", "n2", 130.0, 0.5),
            span("t1", "s2", "n9", 130.1, 0.5),
        ];
        let digest = integrate_with_traces(digests, &spans).unwrap();
        assert_eq!(digest.warnings.len(), 1);
        assert!(digest.warnings[0].contains("unknown node \"n9\""));
        assert_eq!(digest.trace_links[0].node_path, vec!["n2".to_string()]);
        assert!(digest.text.contains("warnings:"));
    }

    #[test]
    fn integrate_rejects_empty_and_misaligned_digests() {
        assert!(matches!(
            integrate_with_traces(Vec::new(), &[]),
            Err(MetaError::InvalidArgument(_))
        ));
        let mut digests =
            collect(&[bundle("n2"), bundle("n5")], &table(), None, &Default::default()).unwrap();
        digests[1].window = Window::new(0.0, 60.0).unwrap();
        assert!(matches!(
            integrate_with_traces(digests, &[]),
            Err(MetaError::Alignment(_))
        ));
    }

    #[test]
    fn aggregate_weighs_flags_by_importance() {
        use super::test_support::digest_with_flags;
        let table = table();
        let w = window();
        let flags = NodeFlags { metric_anomaly: true, error_logs: false };
        let quiet = NodeFlags::default();
        // Only n6 (importance 1.5 of total 7.0) flags: 1.5/7 ≈ 0.214.
        let digests: Vec<NodeDigest> = ["n1", "n2", "n3", "n4", "n5", "n6"]
            .iter()
            .map(|n| digest_with_flags(n, w, if *n == "n6" { flags } else { quiet }))
            .collect();
        let (suspicious, score) = aggregate_node_flags(&digests, &table);
        assert!((score - 1.5 / 7.0).abs() < 1e-12);
        assert!(!suspicious);
        // n6 and n3 flag: (1.5 + 1.25)/7 ≈ 0.393 > 0.25.
        let digests: Vec<NodeDigest> = ["n1", "n2", "n3", "n4", "n5", "n6"]
            .iter()
            .map(|n| {
                digest_with_flags(n, w, if *n == "n6" || *n == "n3" { flags } else { quiet })
            })
            .collect();
        let (suspicious, score) = aggregate_node_flags(&digests, &table);
        assert!((score - 2.75 / 7.0).abs() < 1e-12);
        assert!(suspicious);
    }

    #[test]
    fn aggregate_handles_empty_input() {
        let (suspicious, score) = aggregate_node_flags(&[], &table());
        assert!(!suspicious);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn suspicion_hint_is_appended_to_text() {
        let digests = collect(&[bundle("n2")], &table(), None, &Default::default()).unwrap();
        let digest = integrate_with_traces(digests, &[]).unwrap();
        let hinted = digest.with_suspicion_hint(0.393, true);
        assert!(hinted.text.contains("suspicion score 0.393"));
        assert!(hinted.text.contains("flagged as suspicious"));
        assert_eq!(hinted.per_node, digest.per_node);
        let quiet = digest.with_suspicion_hint(0.0, false);
        assert!(quiet.text.contains("below threshold"));
    }
}
