//! Deterministic fault-injection simulator.
//!
//! Generates per-window telemetry bundles for a small cluster — baseline
//! metrics, logs, and coordinator-rooted traces — and injects one of ten
//! fault types into chosen windows. Everything is driven by `ChaCha8Rng`
//! with per-window seeds derived from the campaign seed, so a campaign is a
//! pure function of `(ClusterSpec, CampaignSpec)`: regenerating it yields
//! byte-identical datasets, and a fault window differs from its same-seed
//! normal twin only where the fault actually acts.
//!
//! A campaign can be exported to disk (`cluster.json`, `truth.json`,
//! `windows/<start>/<node>.jsonl`) and loaded back, and its ground truth
//! can be turned into a scripted mock that answers the agents like a
//! perfect (or deliberately noisy) oracle.

use crate::llm::{MockScript, ScriptedResponse};
use crate::roles::{ClusterConfig, ClusterNode, RoleKind};
use crate::tasks::FaultLabel;
use crate::telemetry::{
    LogEntry, LogLevel, MetricSeries, NodeId, RawMetricSet, SpanStatus, TelemetryBundle,
    TelemetryError, TraceSpan, Window,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Errors raised while generating, exporting, or loading datasets.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("simulation config error: {0}")]
    Config(String),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Role(#[from] crate::roles::RoleError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Metric series every node reports.
pub const SERIES_CPU: &str = "cpu_usage";
pub const SERIES_MEMORY: &str = "memory_usage";
pub const SERIES_DISK_IO: &str = "disk_io";
pub const SERIES_NETWORK: &str = "network_throughput";
pub const SERIES_WRITE_RATE: &str = "write_rate";

/// All simulated series, alphabetical.
pub const ALL_SERIES: [&str; 5] = [
    SERIES_CPU,
    SERIES_DISK_IO,
    SERIES_MEMORY,
    SERIES_NETWORK,
    SERIES_WRITE_RATE,
];

/// The reference cluster: one config node, one coordinator, four storage
/// nodes leading 2/1/1/4 of 8 partitions.
pub fn standard_cluster() -> ClusterConfig {
    ClusterConfig {
        nodes: vec![
            ClusterNode {
                id: "n1".into(),
                kind: RoleKind::Config,
                leader_partitions: 0,
            },
            ClusterNode {
                id: "n2".into(),
                kind: RoleKind::Coordinator,
                leader_partitions: 0,
            },
            ClusterNode {
                id: "n3".into(),
                kind: RoleKind::Storage,
                leader_partitions: 2,
            },
            ClusterNode {
                id: "n4".into(),
                kind: RoleKind::Storage,
                leader_partitions: 1,
            },
            ClusterNode {
                id: "n5".into(),
                kind: RoleKind::Storage,
                leader_partitions: 1,
            },
            ClusterNode {
                id: "n6".into(),
                kind: RoleKind::Storage,
                leader_partitions: 4,
            },
        ],
        total_partitions: 8,
    }
}

/// Static generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub config: ClusterConfig,
    /// Window length in seconds.
    pub window_seconds: f64,
    /// Metric sampling period in seconds.
    pub sample_period: f64,
    /// Probability that one metric sample is missing.
    pub missing_rate: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            config: standard_cluster(),
            window_seconds: 60.0,
            sample_period: 5.0,
            missing_rate: 0.02,
        }
    }
}

/// Campaign shape: how many windows of each kind, and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignSpec {
    /// Fault windows generated per fault label.
    pub per_fault: usize,
    /// Normal (fault-free) windows.
    pub normal: usize,
    pub seed: u64,
}

/// Ground-truth record for one fault window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEntry {
    pub label: FaultLabel,
    /// Nodes the fault was injected into; empty for workload-level faults.
    pub targets: Vec<NodeId>,
}

/// Ground truth for a whole campaign, keyed by window start seconds.
/// Normal windows map to `None`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub windows: BTreeMap<u64, Option<TruthEntry>>,
}

impl GroundTruth {
    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text)
            .map_err(|e| SimError::Format(format!("truth parse error: {e}")))
    }

    pub fn load_json_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("truth serializes infallibly");
        text.push('\n');
        text
    }

    /// Starts of fault windows, ascending.
    pub fn fault_windows(&self) -> Vec<u64> {
        self.windows
            .iter()
            .filter_map(|(start, entry)| entry.as_ref().map(|_| *start))
            .collect()
    }
}

/// One generated window: its truth and one bundle per node (node order).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedWindow {
    pub window: Window,
    pub truth: Option<TruthEntry>,
    pub bundles: Vec<TelemetryBundle>,
}

/// A full generated campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub config: ClusterConfig,
    pub truth: GroundTruth,
    pub windows: Vec<GeneratedWindow>,
}

/// Knuth's Poisson sampler; fine for the small rates used here.
fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    let limit = (-lambda).exp();
    let mut k = 0u64;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit || k > 10_000 {
            return k;
        }
        k += 1;
    }
}

/// Simulated address of the i-th node (0-based): `10.0.0.{i+1}:6667`.
fn node_address(index: usize) -> String {
    format!("10.0.0.{}:6667", index + 1)
}

/// Baseline level for one series on one node. Storage load scales with the
/// node's leader partition count; the coordinator carries the routing
/// traffic.
fn baseline_level(series: &str, node: &ClusterNode) -> f64 {
    let leaders = node.leader_partitions as f64;
    match (series, node.kind) {
        (SERIES_CPU, _) => 0.30 + 0.02 * leaders,
        (SERIES_MEMORY, _) => 0.50 + 0.01 * leaders,
        (SERIES_DISK_IO, RoleKind::Storage) => 0.20 + 0.02 * leaders,
        (SERIES_DISK_IO, _) => 0.10,
        (SERIES_NETWORK, RoleKind::Coordinator) => 55.0,
        (SERIES_NETWORK, RoleKind::Config) => 8.0,
        (SERIES_NETWORK, RoleKind::Storage) => 35.0 + 3.0 * leaders,
        (SERIES_WRITE_RATE, RoleKind::Storage) => 80.0 + 60.0 * leaders,
        (SERIES_WRITE_RATE, RoleKind::Coordinator) => 300.0,
        (SERIES_WRITE_RATE, _) => 5.0,
        _ => 1.0,
    }
}

/// Ratio-valued series stay in `[0, 1]`; the rest just stay non-negative.
fn clamp_value(series: &str, v: f64) -> f64 {
    match series {
        SERIES_CPU | SERIES_MEMORY | SERIES_DISK_IO => v.clamp(0.0, 1.0),
        _ => v.max(0.0),
    }
}

/// Generates one node's baseline metric series for a window.
fn baseline_metrics(
    spec: &ClusterSpec,
    node: &ClusterNode,
    window: Window,
    rng: &mut ChaCha8Rng,
) -> RawMetricSet {
    let samples = (spec.window_seconds / spec.sample_period) as usize;
    let series = ALL_SERIES
        .iter()
        .map(|name| {
            let base = baseline_level(name, node);
            let amplitude = 0.08 * base;
            let mut timestamps = Vec::with_capacity(samples);
            let mut values = Vec::with_capacity(samples);
            for i in 0..samples {
                timestamps.push(window.start() + spec.sample_period * i as f64);
                let noise = amplitude * (2.0 * rng.gen::<f64>() - 1.0);
                let missing = rng.gen::<f64>() < spec.missing_rate;
                values.push(if missing {
                    None
                } else {
                    Some(clamp_value(name, base + noise))
                });
            }
            // Degenerate guard: imputation needs at least one observation.
            if values.iter().all(Option::is_none) {
                values[samples / 2] = Some(clamp_value(name, base));
            }
            MetricSeries {
                name: name.to_string(),
                timestamps,
                values,
            }
        })
        .collect();
    RawMetricSet {
        node_id: node.id.clone(),
        series,
    }
}

/// Generates one node's baseline log entries (unsorted; the caller sorts
/// once all injections are done).
fn baseline_logs(
    spec: &ClusterSpec,
    node: &ClusterNode,
    node_index: usize,
    window: Window,
    rng: &mut ChaCha8Rng,
) -> Vec<LogEntry> {
    let mut entries = Vec::new();
    let stamp = |rng: &mut ChaCha8Rng| rng.gen_range(window.start()..window.end());
    let peer_count = spec.config.nodes.len();
    for _ in 0..poisson(rng, 6.0) {
        // Heartbeat to a random peer (never ourselves).
        let mut peer = rng.gen_range(0..peer_count - 1);
        if peer >= node_index {
            peer += 1;
        }
        entries.push(LogEntry {
            timestamp: stamp(rng),
            level: LogLevel::Info,
            message: format!("heartbeat ok from {}", node_address(peer)),
        });
    }
    match node.kind {
        RoleKind::Config => {
            for _ in 0..poisson(rng, 1.5) {
                let round: u32 = rng.gen_range(100..1000);
                entries.push(LogEntry {
                    timestamp: stamp(rng),
                    level: LogLevel::Info,
                    message: format!("config sync round {round} complete"),
                });
            }
        }
        RoleKind::Coordinator => {
            let storage: Vec<&ClusterNode> = spec
                .config
                .nodes
                .iter()
                .filter(|n| n.kind == RoleKind::Storage)
                .collect();
            for _ in 0..poisson(rng, 4.0) {
                let qid: u32 = rng.gen_range(1000..100_000);
                let target = storage[rng.gen_range(0..storage.len())];
                entries.push(LogEntry {
                    timestamp: stamp(rng),
                    level: LogLevel::Info,
                    message: format!("scheduled query {qid} on node {}", target.id),
                });
            }
        }
        RoleKind::Storage => {
            let write_rate = 2.0 + 1.5 * node.leader_partitions as f64;
            for _ in 0..poisson(rng, write_rate) {
                let bytes: u32 = rng.gen_range(1_000..200_000);
                let tablet = rng.gen_range(1..=spec.config.total_partitions);
                entries.push(LogEntry {
                    timestamp: stamp(rng),
                    level: LogLevel::Info,
                    message: format!("wrote {bytes} bytes to tablet {tablet}"),
                });
            }
            for _ in 0..poisson(rng, 0.7) {
                let tablet = rng.gen_range(1..=spec.config.total_partitions);
                let ms: u32 = rng.gen_range(40..900);
                entries.push(LogEntry {
                    timestamp: stamp(rng),
                    level: LogLevel::Info,
                    message: format!("compaction finished on tablet {tablet} in {ms} ms"),
                });
            }
        }
    }
    entries
}

/// One in-flight trace: a coordinator root plus storage children. Kept flat
/// until fault mutation is done, then distributed to per-node bundles.
#[derive(Debug)]
struct SimTrace {
    root: TraceSpan,
    children: Vec<TraceSpan>,
}

impl SimTrace {
    /// Recomputes the root duration so it covers its children.
    fn cover_children(&mut self) {
        let root_start = self.root.start;
        let mut end = self.root.start + self.root.duration;
        for child in &self.children {
            end = end.max(child.start + child.duration);
        }
        self.root.duration = end - root_start;
    }

    fn touches(&self, node_id: &str) -> bool {
        self.children.iter().any(|c| c.node_id == node_id)
    }
}

/// Generates the window's baseline traces: coordinator-rooted queries
/// fanning out to 1–3 storage nodes.
fn baseline_traces(spec: &ClusterSpec, window: Window, rng: &mut ChaCha8Rng) -> Vec<SimTrace> {
    let coordinator = spec
        .config
        .nodes
        .iter()
        .find(|n| n.kind == RoleKind::Coordinator)
        .map(|n| n.id.clone())
        .unwrap_or_else(|| spec.config.nodes[0].id.clone());
    let storage: Vec<NodeId> = spec
        .config
        .nodes
        .iter()
        .filter(|n| n.kind == RoleKind::Storage)
        .map(|n| n.id.clone())
        .collect();
    let count = 4 + poisson(rng, 2.0);
    let mut traces = Vec::with_capacity(count as usize);
    for q in 0..count {
        let trace_id = format!("t{}q{q}", window.start() as u64);
        let root_start = rng.gen_range(window.start()..window.end() - 1.0);
        let mut root = TraceSpan {
            trace_id: trace_id.clone(),
            span_id: "root".into(),
            parent_span_id: None,
            node_id: coordinator.clone(),
            operation: "route_query".into(),
            start: root_start,
            duration: rng.gen_range(0.005..0.015),
            status: SpanStatus::Ok,
        };
        let fanout = rng.gen_range(1..=3.min(storage.len()));
        let mut picks = storage.clone();
        picks.shuffle(rng);
        picks.truncate(fanout);
        picks.sort();
        let children: Vec<TraceSpan> = picks
            .into_iter()
            .enumerate()
            .map(|(i, node_id)| TraceSpan {
                trace_id: trace_id.clone(),
                span_id: format!("sub{i}"),
                parent_span_id: Some("root".into()),
                node_id,
                operation: "execute_subquery".into(),
                start: root_start + rng.gen_range(0.002..0.01),
                duration: rng.gen_range(0.02..0.06),
                status: SpanStatus::Ok,
            })
            .collect();
        root.duration = rng.gen_range(0.005..0.015);
        let mut trace = SimTrace { root, children };
        trace.cover_children();
        traces.push(trace);
    }
    traces
}

/// Multiplies every `Some` value of `series` on `node` by `factor`.
fn scale_series(bundle: &mut TelemetryBundle, series: &str, factor: f64) {
    for s in bundle.metrics.series.iter_mut().filter(|s| s.name == series) {
        for v in s.values.iter_mut().flatten() {
            *v = clamp_value(series, *v * factor);
        }
    }
}

/// Pushes every `Some` value of a ratio series toward saturation:
/// `v ← v + intensity · (1 − v)`.
fn saturate_series(bundle: &mut TelemetryBundle, series: &str, intensity: f64) {
    for s in bundle.metrics.series.iter_mut().filter(|s| s.name == series) {
        for v in s.values.iter_mut().flatten() {
            *v = clamp_value(series, *v + intensity * (1.0 - *v));
        }
    }
}

/// Applies one fault to the baseline window. Returns the injected targets.
///
/// Mutations are strictly local to the fault's footprint, so a fault window
/// matches its same-seed normal twin everywhere else. In particular
/// `excessive_export`/`excessive_import` move logs only — their metric
/// series stay byte-identical to the normal twin.
fn apply_fault(
    label: FaultLabel,
    spec: &ClusterSpec,
    window: Window,
    bundles: &mut [TelemetryBundle],
    traces: &mut Vec<SimTrace>,
    rng: &mut ChaCha8Rng,
) -> Vec<NodeId> {
    let storage_indices: Vec<usize> = spec
        .config
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == RoleKind::Storage)
        .map(|(i, _)| i)
        .collect();
    let coordinator_index = spec
        .config
        .nodes
        .iter()
        .position(|n| n.kind == RoleKind::Coordinator)
        .unwrap_or(0);
    let pick_target = |rng: &mut ChaCha8Rng| storage_indices[rng.gen_range(0..storage_indices.len())];
    let stamp = |rng: &mut ChaCha8Rng| rng.gen_range(window.start()..window.end());

    match label {
        FaultLabel::CpuSaturation => {
            let target = pick_target(rng);
            let intensity = rng.gen_range(0.55..0.85);
            saturate_series(&mut bundles[target], SERIES_CPU, intensity);
            vec![spec.config.nodes[target].id.clone()]
        }
        FaultLabel::MemorySaturation => {
            let target = pick_target(rng);
            let intensity = rng.gen_range(0.55..0.85);
            saturate_series(&mut bundles[target], SERIES_MEMORY, intensity);
            vec![spec.config.nodes[target].id.clone()]
        }
        FaultLabel::IoSaturation => {
            let target = pick_target(rng);
            let intensity = rng.gen_range(0.55..0.85);
            saturate_series(&mut bundles[target], SERIES_DISK_IO, intensity);
            vec![spec.config.nodes[target].id.clone()]
        }
        FaultLabel::NetworkDelay => {
            let target = pick_target(rng);
            let target_id = spec.config.nodes[target].id.clone();
            let span_factor = rng.gen_range(3.0..6.0);
            let throughput_factor = rng.gen_range(0.75..0.9);
            scale_series(&mut bundles[target], SERIES_NETWORK, throughput_factor);
            for trace in traces.iter_mut() {
                for child in trace.children.iter_mut().filter(|c| c.node_id == target_id) {
                    child.duration *= span_factor;
                }
                trace.cover_children();
            }
            vec![target_id]
        }
        FaultLabel::NetworkBandwidthLimit => {
            let target = pick_target(rng);
            let target_id = spec.config.nodes[target].id.clone();
            let throughput_factor = rng.gen_range(0.15..0.35);
            let span_factor = rng.gen_range(1.5..2.5);
            scale_series(&mut bundles[target], SERIES_NETWORK, throughput_factor);
            for trace in traces.iter_mut() {
                for child in trace.children.iter_mut().filter(|c| c.node_id == target_id) {
                    child.duration *= span_factor;
                }
                trace.cover_children();
            }
            vec![target_id]
        }
        FaultLabel::NetworkPartition => {
            let target = pick_target(rng);
            let target_id = spec.config.nodes[target].id.clone();
            scale_series(&mut bundles[target], SERIES_NETWORK, 0.05);
            for trace in traces.iter_mut() {
                if trace.touches(&target_id) {
                    // The partitioned node never reports its spans; the
                    // coordinator sees the query fail.
                    trace.children.retain(|c| c.node_id != target_id);
                    trace.root.status = SpanStatus::Error;
                }
            }
            let target_address = node_address(target);
            for (i, bundle) in bundles.iter_mut().enumerate() {
                if i == target {
                    continue;
                }
                for _ in 0..3 + poisson(rng, 1.0) {
                    let ts = stamp(rng);
                    bundle.logs.entries.push(LogEntry {
                        timestamp: ts,
                        level: LogLevel::Warn,
                        message: format!("heartbeat timeout to {target_address} after 3000 ms"),
                    });
                }
            }
            for _ in 0..2 + poisson(rng, 2.0) {
                let mut peer = rng.gen_range(0..spec.config.nodes.len() - 1);
                if peer >= target {
                    peer += 1;
                }
                let ts = stamp(rng);
                bundles[target].logs.entries.push(LogEntry {
                    timestamp: ts,
                    level: LogLevel::Warn,
                    message: format!("heartbeat timeout to {} after 3000 ms", node_address(peer)),
                });
            }
            vec![target_id]
        }
        FaultLabel::WorkloadSpike => {
            let target = pick_target(rng);
            let target_id = spec.config.nodes[target].id.clone();
            let write_factor = rng.gen_range(2.5..4.0);
            let intensity = rng.gen_range(0.25..0.45);
            scale_series(&mut bundles[target], SERIES_WRITE_RATE, write_factor);
            saturate_series(&mut bundles[target], SERIES_CPU, intensity);
            for _ in 0..10 + poisson(rng, 20.0) {
                let bytes: u32 = rng.gen_range(1_000..200_000);
                let tablet = rng.gen_range(1..=spec.config.total_partitions);
                let ts = stamp(rng);
                bundles[target].logs.entries.push(LogEntry {
                    timestamp: ts,
                    level: LogLevel::Info,
                    message: format!("wrote {bytes} bytes to tablet {tablet}"),
                });
            }
            // The spike lands directly on the leader, so the extra traces
            // are local to the target instead of coordinator-rooted.
            for j in 0..8 + poisson(rng, 3.0) {
                let start = rng.gen_range(window.start()..window.end() - 0.5);
                traces.push(SimTrace {
                    root: TraceSpan {
                        trace_id: format!("t{}w{j}", window.start() as u64),
                        span_id: "root".into(),
                        parent_span_id: None,
                        node_id: target_id.clone(),
                        operation: "write_batch".into(),
                        start,
                        duration: rng.gen_range(0.01..0.03),
                        status: SpanStatus::Ok,
                    },
                    children: Vec::new(),
                });
            }
            vec![target_id]
        }
        FaultLabel::SlowQueries => {
            // Workload-level fault: the slowest fifth of all spans inflates,
            // wherever they run. No single node is the target.
            let mut durations: Vec<f64> = traces
                .iter()
                .flat_map(|t| t.children.iter().map(|c| c.duration))
                .collect();
            durations.sort_by(f64::total_cmp);
            let slow_count = durations.len().div_ceil(5);
            let threshold = if slow_count == 0 {
                f64::INFINITY
            } else {
                durations[durations.len() - slow_count]
            };
            for trace in traces.iter_mut() {
                for child in trace.children.iter_mut() {
                    if child.duration >= threshold {
                        child.duration *= rng.gen_range(4.0..8.0);
                    }
                }
                trace.cover_children();
            }
            for _ in 0..2 + poisson(rng, 4.0) {
                let qid: u32 = rng.gen_range(1000..100_000);
                let ms: u32 = rng.gen_range(2_000..20_000);
                let ts = stamp(rng);
                bundles[coordinator_index].logs.entries.push(LogEntry {
                    timestamp: ts,
                    level: LogLevel::Warn,
                    message: format!("query {qid} exceeded latency budget ({ms} ms)"),
                });
            }
            Vec::new()
        }
        FaultLabel::ExcessiveExport => {
            let target = pick_target(rng);
            let target_id = spec.config.nodes[target].id.clone();
            for _ in 0..15 + poisson(rng, 8.0) {
                let chunk: u32 = rng.gen_range(1..5000);
                let mut peer = rng.gen_range(0..spec.config.nodes.len() - 1);
                if peer >= target {
                    peer += 1;
                }
                let ts = stamp(rng);
                bundles[target].logs.entries.push(LogEntry {
                    timestamp: ts,
                    level: LogLevel::Info,
                    message: format!(
                        "exported snapshot chunk {chunk} to peer {}",
                        node_address(peer)
                    ),
                });
            }
            for _ in 0..2 + poisson(rng, 2.0) {
                let tablet = rng.gen_range(1..=spec.config.total_partitions);
                let ts = stamp(rng);
                bundles[target].logs.entries.push(LogEntry {
                    timestamp: ts,
                    level: LogLevel::Error,
                    message: format!("export backlog exceeded limit on tablet {tablet}"),
                });
            }
            vec![target_id]
        }
        FaultLabel::ExcessiveImport => {
            let target = pick_target(rng);
            let target_id = spec.config.nodes[target].id.clone();
            for _ in 0..15 + poisson(rng, 8.0) {
                let sstable: u32 = rng.gen_range(1..5000);
                let mut peer = rng.gen_range(0..spec.config.nodes.len() - 1);
                if peer >= target {
                    peer += 1;
                }
                let ts = stamp(rng);
                bundles[target].logs.entries.push(LogEntry {
                    timestamp: ts,
                    level: LogLevel::Info,
                    message: format!(
                        "imported sstable {sstable} from peer {}",
                        node_address(peer)
                    ),
                });
            }
            for _ in 0..2 + poisson(rng, 2.0) {
                let tablet = rng.gen_range(1..=spec.config.total_partitions);
                let ts = stamp(rng);
                bundles[target].logs.entries.push(LogEntry {
                    timestamp: ts,
                    level: LogLevel::Error,
                    message: format!("import queue overflow on tablet {tablet}"),
                });
            }
            vec![target_id]
        }
    }
}

/// Generates one window of telemetry. The baseline consumes the generator
/// stream first, so for a given seed the fault-free prefix is identical
/// whether a fault is injected or not.
pub fn generate_window(
    spec: &ClusterSpec,
    window: Window,
    label: Option<FaultLabel>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<TelemetryBundle>, Option<TruthEntry>), SimError> {
    if spec.config.nodes.is_empty() {
        return Err(SimError::Config("cluster has no nodes".into()));
    }
    if spec.sample_period <= 0.0 || spec.window_seconds < spec.sample_period {
        return Err(SimError::Config(format!(
            "bad sampling: period {} over {}s windows",
            spec.sample_period, spec.window_seconds
        )));
    }
    let mut bundles: Vec<TelemetryBundle> = Vec::with_capacity(spec.config.nodes.len());
    for (i, node) in spec.config.nodes.iter().enumerate() {
        let mut bundle = TelemetryBundle::empty(&node.id, window);
        bundle.metrics = baseline_metrics(spec, node, window, rng);
        bundle.logs.entries = baseline_logs(spec, node, i, window, rng);
        bundles.push(bundle);
    }
    let mut traces = baseline_traces(spec, window, rng);

    let truth = label.map(|label| TruthEntry {
        targets: apply_fault(label, spec, window, &mut bundles, &mut traces, rng),
        label,
    });

    // Distribute spans to their executing node and restore ordering
    // invariants broken by injections.
    let index_of: BTreeMap<&str, usize> = spec
        .config
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    for trace in traces {
        let spans = std::iter::once(trace.root).chain(trace.children);
        for span in spans {
            let idx = index_of[span.node_id.as_str()];
            bundles[idx].spans.push(span);
        }
    }
    for bundle in &mut bundles {
        bundle
            .logs
            .entries
            .sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        bundle.spans.sort_by(|a, b| {
            a.start
                .total_cmp(&b.start)
                .then_with(|| a.trace_id.cmp(&b.trace_id))
                .then_with(|| a.span_id.cmp(&b.span_id))
        });
        bundle.validate()?;
    }
    Ok((bundles, truth))
}

/// Derives the per-window generator seed from the campaign seed.
fn window_seed(campaign_seed: u64, start: u64) -> u64 {
    // SplitMix64 finalizer over the combined value: cheap, well-mixed, and
    // stable across platforms.
    let mut z = campaign_seed ^ start.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a full campaign: `per_fault` windows of every fault label plus
/// `normal` fault-free windows, shuffled into consecutive windows starting
/// at t = 0.
pub fn generate_campaign(spec: &ClusterSpec, campaign: &CampaignSpec) -> Result<Campaign, SimError> {
    if campaign.per_fault == 0 && campaign.normal == 0 {
        return Err(SimError::Config("campaign has zero windows".into()));
    }
    let mut labels: Vec<Option<FaultLabel>> = Vec::new();
    for label in FaultLabel::ALL {
        labels.extend(std::iter::repeat(Some(label)).take(campaign.per_fault));
    }
    labels.extend(std::iter::repeat(None).take(campaign.normal));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(campaign.seed);
    labels.shuffle(&mut shuffle_rng);

    let mut truth = GroundTruth::default();
    let mut windows = Vec::with_capacity(labels.len());
    for (i, label) in labels.into_iter().enumerate() {
        let start = spec.window_seconds * i as f64;
        let window = Window::new(start, start + spec.window_seconds)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(window_seed(campaign.seed, start as u64));
        let (bundles, entry) = generate_window(spec, window, label, &mut rng)?;
        truth.windows.insert(start as u64, entry.clone());
        windows.push(GeneratedWindow {
            window,
            truth: entry,
            bundles,
        });
    }
    Ok(Campaign {
        config: spec.config.clone(),
        truth,
        windows,
    })
}

/// Writes a campaign to `dir`:
///
/// ```text
/// dir/cluster.json
/// dir/truth.json
/// dir/windows/<start>/<node>.jsonl
/// ```
///
/// An existing `windows/` tree is removed first so repeated exports are
/// byte-identical regardless of what was there before.
pub fn export_campaign(campaign: &Campaign, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    let mut config_json = serde_json::to_string_pretty(&campaign.config)
        .map_err(|e| SimError::Format(e.to_string()))?;
    config_json.push('\n');
    std::fs::write(dir.join("cluster.json"), config_json)?;
    std::fs::write(dir.join("truth.json"), campaign.truth.to_json_string())?;
    let windows_dir = dir.join("windows");
    if windows_dir.exists() {
        std::fs::remove_dir_all(&windows_dir)?;
    }
    for generated in &campaign.windows {
        let window_dir = windows_dir.join(format!("{}", generated.window.start() as u64));
        std::fs::create_dir_all(&window_dir)?;
        for bundle in &generated.bundles {
            let path = window_dir.join(format!("{}.jsonl", bundle.node_id));
            crate::telemetry::save_bundle(&path, bundle)?;
        }
    }
    Ok(())
}

/// A dataset loaded back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub config: ClusterConfig,
    pub truth: GroundTruth,
    /// Windows ascending; bundles ordered by node id.
    pub windows: Vec<(Window, Vec<TelemetryBundle>)>,
}

/// Loads a dataset previously written by [`export_campaign`].
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, SimError> {
    let config = ClusterConfig::from_json_file(&dir.join("cluster.json"))?;
    let truth = GroundTruth::load_json_file(&dir.join("truth.json"))?;
    let windows_dir = dir.join("windows");
    let mut starts: Vec<u64> = Vec::new();
    for entry in std::fs::read_dir(&windows_dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let start: u64 = name
            .parse()
            .map_err(|_| SimError::Format(format!("bad window directory name {name:?}")))?;
        starts.push(start);
    }
    starts.sort_unstable();
    let mut windows = Vec::with_capacity(starts.len());
    for start in starts {
        let window_dir = windows_dir.join(format!("{start}"));
        let mut bundles = Vec::new();
        let mut files: Vec<_> = std::fs::read_dir(&window_dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .collect();
        files.sort();
        for path in files {
            let bundle = crate::telemetry::load_bundle(&path)?;
            if bundle.window.start() as u64 != start {
                return Err(SimError::Format(format!(
                    "bundle {} covers {} but sits in window directory {start}",
                    path.display(),
                    bundle.window.label()
                )));
            }
            bundles.push(bundle);
        }
        if bundles.is_empty() {
            return Err(SimError::Format(format!("window {start} has no bundles")));
        }
        windows.push((bundles[0].window, bundles));
    }
    if windows.is_empty() {
        return Err(SimError::Format("dataset has no windows".into()));
    }
    Ok(LoadedDataset {
        config,
        truth,
        windows,
    })
}

/// Builds a scripted mock that answers like an oracle reading the ground
/// truth, optionally flipping each detection verdict with probability
/// `flip_rate`. Returns the script and the set of flipped window starts.
///
/// Per window the script carries a verdict rule and (for true fault
/// windows) a diagnose rule on the same matcher — the under-review marker
/// followed by the window's own header, which retrieval examples embedded
/// in the prompt can never contain; tool compatibility routes each request
/// to the right one. Generic rationale/mitigation rules close the tail so
/// full pipeline runs never fall through to an incompatible default.
pub fn oracle_script_from_truth(
    truth: &GroundTruth,
    flip_rate: f64,
    seed: u64,
) -> (MockScript, BTreeSet<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut script = MockScript::default();
    let mut flipped = BTreeSet::new();
    for (&start, entry) in &truth.windows {
        let truly_anomalous = entry.is_some();
        let flip = flip_rate > 0.0 && rng.gen::<f64>() < flip_rate;
        if flip {
            flipped.insert(start);
        }
        let verdict = truly_anomalous != flip;
        let matcher = format!(
            "{}\ncluster window [{start}s,",
            crate::tasks::UNDER_REVIEW_MARKER
        );
        script.script_response(
            &matcher,
            ScriptedResponse::tool(
                "verdict",
                json!({"answer": if verdict { "yes" } else { "no" }}),
            ),
        );
        if let Some(entry) = entry {
            script.script_response(
                &matcher,
                ScriptedResponse::tool(
                    "diagnose",
                    json!({
                        "label": entry.label.as_str(),
                        "suspect_nodes": entry.targets,
                        "rationale": "scripted oracle diagnosis"
                    }),
                ),
            );
        }
    }
    script.script_response(
        "Briefly explain",
        ScriptedResponse::text("signals matched a known fault signature"),
    );
    script.script_response(
        "propose_mitigation",
        ScriptedResponse::tool(
            "propose_mitigation",
            json!({
                "actions": [
                    {"title": "Rebalance leader partitions",
                     "detail": "move leader partitions away from the affected nodes",
                     "targets": []},
                    {"title": "Throttle background jobs",
                     "detail": "pause compactions and bulk transfers until load normalizes",
                     "targets": []}
                ],
                "rationale": "scripted oracle playbook"
            }),
        ),
    );
    (script, flipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn spec() -> ClusterSpec {
        ClusterSpec::default()
    }

    fn window_at(start: f64) -> Window {
        Window::new(start, start + 60.0).unwrap()
    }

    fn rng_for(seed: u64, start: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(window_seed(seed, start))
    }

    #[test]
    fn standard_cluster_bootstraps() {
        let table = crate::roles::bootstrap_roles(&standard_cluster()).unwrap();
        assert_eq!(table.roles.len(), 6);
        assert_eq!(table.leader().unwrap().node_id, "n6");
        assert_eq!(table.total_partitions, 8);
    }

    #[test]
    fn windows_are_deterministic() {
        let mut a = rng_for(7, 0);
        let mut b = rng_for(7, 0);
        let (wa, _) = generate_window(&spec(), window_at(0.0), None, &mut a).unwrap();
        let (wb, _) = generate_window(&spec(), window_at(0.0), None, &mut b).unwrap();
        assert_eq!(wa, wb);
        let mut c = rng_for(8, 0);
        let (wc, _) = generate_window(&spec(), window_at(0.0), None, &mut c).unwrap();
        assert_ne!(wa, wc, "different seeds must differ");
    }

    #[test]
    fn baseline_is_plausible() {
        let mut rng = rng_for(1, 60);
        let (bundles, truth) =
            generate_window(&spec(), window_at(60.0), None, &mut rng).unwrap();
        assert!(truth.is_none());
        assert_eq!(bundles.len(), 6);
        for bundle in &bundles {
            bundle.validate().unwrap();
            assert_eq!(bundle.metrics.series.len(), ALL_SERIES.len());
            for series in &bundle.metrics.series {
                assert_eq!(series.values.len(), 12);
                for v in series.values.iter().flatten() {
                    assert!(*v >= 0.0);
                    if matches!(
                        series.name.as_str(),
                        SERIES_CPU | SERIES_MEMORY | SERIES_DISK_IO
                    ) {
                        assert!(*v <= 1.0);
                    }
                }
            }
            assert!(
                bundle
                    .logs
                    .entries
                    .iter()
                    .all(|e| e.level == LogLevel::Info),
                "baseline logs carry no warnings or errors"
            );
        }
        // The coordinator executes every root span.
        let coordinator = &bundles[1];
        assert!(coordinator.spans.iter().any(|s| s.operation == "route_query"));
    }

    #[test]
    fn missing_rate_is_respected() {
        let mut missing = 0usize;
        let mut total = 0usize;
        for start in 0..40u64 {
            let mut rng = rng_for(3, start * 60);
            let (bundles, _) =
                generate_window(&spec(), window_at(start as f64 * 60.0), None, &mut rng).unwrap();
            for bundle in &bundles {
                for series in &bundle.metrics.series {
                    total += series.values.len();
                    missing += series.values.iter().filter(|v| v.is_none()).count();
                }
            }
        }
        let rate = missing as f64 / total as f64;
        assert!((0.005..0.05).contains(&rate), "missing rate {rate} off target");
    }

    /// A resource fault must be a strictly local delta on its same-seed
    /// normal twin: only the target node's one series moves.
    #[test]
    fn cpu_fault_is_local_to_target_series() {
        let mut normal_rng = rng_for(11, 120);
        let (normal, _) =
            generate_window(&spec(), window_at(120.0), None, &mut normal_rng).unwrap();
        let mut fault_rng = rng_for(11, 120);
        let (faulted, truth) = generate_window(
            &spec(),
            window_at(120.0),
            Some(FaultLabel::CpuSaturation),
            &mut fault_rng,
        )
        .unwrap();
        let truth = truth.unwrap();
        assert_eq!(truth.label, FaultLabel::CpuSaturation);
        assert_eq!(truth.targets.len(), 1);
        let target = &truth.targets[0];
        assert!(["n3", "n4", "n5", "n6"].contains(&target.as_str()));

        for (n, f) in normal.iter().zip(&faulted) {
            if &n.node_id != target {
                assert_eq!(n, f, "non-target node {} must be untouched", n.node_id);
                continue;
            }
            assert_eq!(n.logs, f.logs);
            assert_eq!(n.spans, f.spans);
            for (ns, fs) in n.metrics.series.iter().zip(&f.metrics.series) {
                if ns.name == SERIES_CPU {
                    let n_mean = mean(&ns.values);
                    let f_mean = mean(&fs.values);
                    assert!(
                        f_mean > n_mean + 0.3,
                        "cpu must saturate: {n_mean} -> {f_mean}"
                    );
                } else {
                    assert_eq!(ns, fs, "series {} must be untouched", ns.name);
                }
            }
        }
    }

    fn mean(values: &[Option<f64>]) -> f64 {
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len() as f64
    }

    /// Export/import faults move logs only; metrics and spans stay
    /// byte-identical to the normal twin on every node.
    #[test]
    fn export_fault_moves_zero_metrics() {
        for label in [FaultLabel::ExcessiveExport, FaultLabel::ExcessiveImport] {
            let mut normal_rng = rng_for(13, 180);
            let (normal, _) =
                generate_window(&spec(), window_at(180.0), None, &mut normal_rng).unwrap();
            let mut fault_rng = rng_for(13, 180);
            let (faulted, truth) =
                generate_window(&spec(), window_at(180.0), Some(label), &mut fault_rng).unwrap();
            let target = truth.unwrap().targets[0].clone();
            for (n, f) in normal.iter().zip(&faulted) {
                assert_eq!(n.metrics, f.metrics, "{label} must not move metrics");
                assert_eq!(n.spans, f.spans, "{label} must not move spans");
                if n.node_id == target {
                    assert!(f.logs.entries.len() > n.logs.entries.len());
                    assert!(f
                        .logs
                        .entries
                        .iter()
                        .any(|e| e.level == LogLevel::Error));
                } else {
                    assert_eq!(n.logs, f.logs);
                }
            }
        }
    }

    #[test]
    fn partition_drops_target_spans_and_warns() {
        let mut rng = rng_for(17, 240);
        let (bundles, truth) = generate_window(
            &spec(),
            window_at(240.0),
            Some(FaultLabel::NetworkPartition),
            &mut rng,
        )
        .unwrap();
        let target = truth.unwrap().targets[0].clone();
        for bundle in &bundles {
            if bundle.node_id == target {
                assert!(
                    bundle.spans.iter().all(|s| s.operation != "execute_subquery"),
                    "partitioned node must not report subquery spans"
                );
            }
            assert!(
                bundle
                    .logs
                    .entries
                    .iter()
                    .any(|e| e.level == LogLevel::Warn
                        && e.message.starts_with("heartbeat timeout to")),
                "node {} should observe the partition",
                bundle.node_id
            );
        }
        // Every trace that lost a child is marked errored at the root.
        let coordinator = bundles.iter().find(|b| b.node_id == "n2").unwrap();
        assert!(coordinator
            .spans
            .iter()
            .any(|s| s.status == SpanStatus::Error));
    }

    #[test]
    fn slow_queries_inflate_the_tail() {
        let mut normal_rng = rng_for(19, 300);
        let (normal, _) =
            generate_window(&spec(), window_at(300.0), None, &mut normal_rng).unwrap();
        let mut fault_rng = rng_for(19, 300);
        let (faulted, truth) = generate_window(
            &spec(),
            window_at(300.0),
            Some(FaultLabel::SlowQueries),
            &mut fault_rng,
        )
        .unwrap();
        assert!(truth.unwrap().targets.is_empty(), "workload fault has no node target");
        let max_duration = |bundles: &[TelemetryBundle]| {
            bundles
                .iter()
                .flat_map(|b| b.spans.iter().map(|s| s.duration))
                .fold(0.0, f64::max)
        };
        assert!(max_duration(&faulted) > 3.0 * max_duration(&normal));
    }

    #[test]
    fn campaign_shape_and_determinism() {
        let campaign_spec = CampaignSpec {
            per_fault: 2,
            normal: 5,
            seed: 42,
        };
        let campaign = generate_campaign(&spec(), &campaign_spec).unwrap();
        assert_eq!(campaign.windows.len(), 25);
        assert_eq!(campaign.truth.windows.len(), 25);
        let mut by_label: BTreeMap<FaultLabel, usize> = BTreeMap::new();
        let mut normals = 0;
        for (i, generated) in campaign.windows.iter().enumerate() {
            assert_eq!(generated.window.start(), 60.0 * i as f64);
            assert_eq!(
                campaign.truth.windows[&(generated.window.start() as u64)],
                generated.truth
            );
            match &generated.truth {
                Some(entry) => *by_label.entry(entry.label).or_default() += 1,
                None => normals += 1,
            }
        }
        assert_eq!(normals, 5);
        for label in FaultLabel::ALL {
            assert_eq!(by_label[&label], 2, "label {label} count");
        }
        let again = generate_campaign(&spec(), &campaign_spec).unwrap();
        assert_eq!(campaign, again);
    }

    #[test]
    fn export_load_round_trip() {
        let campaign = generate_campaign(
            &spec(),
            &CampaignSpec {
                per_fault: 1,
                normal: 2,
                seed: 5,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_campaign(&campaign, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.config, campaign.config);
        assert_eq!(loaded.truth, campaign.truth);
        assert_eq!(loaded.windows.len(), campaign.windows.len());
        for (loaded_window, generated) in loaded.windows.iter().zip(&campaign.windows) {
            assert_eq!(loaded_window.0, generated.window);
            assert_eq!(loaded_window.1, generated.bundles);
        }
        // Second export over the same directory is byte-identical.
        let fingerprint = |dir: &Path| {
            let mut acc = Vec::new();
            let mut stack = vec![dir.to_path_buf()];
            while let Some(d) = stack.pop() {
                let mut entries: Vec<_> = std::fs::read_dir(&d)
                    .unwrap()
                    .map(|e| e.unwrap().path())
                    .collect();
                entries.sort();
                for path in entries {
                    if path.is_dir() {
                        stack.push(path);
                    } else {
                        acc.push((path.clone(), std::fs::read(&path).unwrap()));
                    }
                }
            }
            acc.sort();
            acc
        };
        let first = fingerprint(dir.path());
        export_campaign(&campaign, dir.path()).unwrap();
        assert_eq!(fingerprint(dir.path()), first);
    }

    #[test]
    fn truth_json_round_trip() {
        let mut truth = GroundTruth::default();
        truth.windows.insert(0, None);
        truth.windows.insert(
            60,
            Some(TruthEntry {
                label: FaultLabel::NetworkPartition,
                targets: vec!["n5".into()],
            }),
        );
        let text = truth.to_json_string();
        assert!(text.contains("\"network_partition\""));
        assert!(text.contains("\"0\": null"));
        let parsed = GroundTruth::from_json_str(&text).unwrap();
        assert_eq!(parsed, truth);
        assert_eq!(parsed.fault_windows(), vec![60]);
        assert!(GroundTruth::from_json_str("{\"windows\": {\"x\": null}}").is_err());
    }

    #[test]
    fn oracle_script_answers_by_window() {
        let mut truth = GroundTruth::default();
        truth.windows.insert(0, None);
        truth.windows.insert(
            60,
            Some(TruthEntry {
                label: FaultLabel::CpuSaturation,
                targets: vec!["n3".into()],
            }),
        );
        let (script, flipped) = oracle_script_from_truth(&truth, 0.0, 9);
        assert!(flipped.is_empty());
        // One verdict rule per window, one diagnose rule for the fault
        // window, plus the two generic tail rules.
        assert_eq!(script.rules.len(), 2 + 1 + 2);
        let verdicts: Vec<&MockRule> = script
            .rules
            .iter()
            .filter(|r| matches!(&r.response, ScriptedResponse::Tool { name, .. } if name == "verdict"))
            .collect();
        assert_eq!(verdicts.len(), 2);
        let expect = |start: u64| {
            format!(
                "{}\ncluster window [{start}s,",
                crate::tasks::UNDER_REVIEW_MARKER
            )
        };
        assert!(verdicts.iter().any(|r| r.matcher == expect(0)));
        assert!(verdicts.iter().any(|r| r.matcher == expect(60)));
    }

    #[test]
    fn oracle_flips_are_deterministic_and_rate_bound() {
        let mut truth = GroundTruth::default();
        for i in 0..200u64 {
            truth.windows.insert(i * 60, None);
        }
        let (_, flipped_a) = oracle_script_from_truth(&truth, 0.1, 77);
        let (_, flipped_b) = oracle_script_from_truth(&truth, 0.1, 77);
        assert_eq!(flipped_a, flipped_b);
        // 10% of 200 draws: comfortably inside [5, 40].
        assert!((5..=40).contains(&flipped_a.len()), "{}", flipped_a.len());
        let (_, none) = oracle_script_from_truth(&truth, 0.0, 77);
        assert!(none.is_empty());
    }

    use crate::llm::MockRule;
}
