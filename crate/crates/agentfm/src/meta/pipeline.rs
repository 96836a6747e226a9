//! End-to-end pipeline for one window: digest collection → suspicion
//! aggregation → detection → diagnosis → mitigation, producing a
//! [`FailureReport`].
//!
//! The pipeline is total over agent failures: once digests exist, it always
//! returns a report. A stage that fails unrecoverably is recorded in
//! [`FailureReport::error`] and the later stages are skipped, so partial
//! results survive. Only digest assembly errors (misaligned bundles,
//! unknown nodes) abort the run, because without a digest there is nothing
//! to report on.

use super::{
    aggregate_node_flags, collect, integrate_with_traces, CollectConfig, MetaError,
};
use crate::llm::LlmClient;
use crate::rag::ExampleStore;
use crate::roles::RoleTable;
use crate::tasks::{detect, diagnose, mitigate, AgentConfig, Diagnosis, MitigationPlan, Verdict};
use crate::telemetry::{TelemetryBundle, TraceSpan, Window};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Which stage failed and why. Stored in the report, never thrown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    /// `"detect"`, `"diagnose"` or `"mitigate"`.
    pub stage: String,
    pub message: String,
}

/// The pipeline's output for one window.
///
/// `diagnosis` and `mitigation` are absent both when their gate was closed
/// (normal window, unknown fault) and when the stage failed; `error`
/// distinguishes the two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub window: Window,
    pub verdict: Verdict,
    pub diagnosis: Option<Diagnosis>,
    pub mitigation: Option<MitigationPlan>,
    /// Epoch of the role table the digests were built against.
    pub role_table_epoch: u64,
    pub error: Option<StageError>,
}

/// Settings for one pipeline run.
#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub collect: CollectConfig,
    pub agent: AgentConfig,
}

/// Deterministic verdict used when even degraded detection fails: any node
/// flag makes the window anomalous.
fn emergency_verdict(digest: &super::ClusterDigest) -> Verdict {
    let anomalous = digest.per_node.iter().any(|d| d.node_flags.any());
    Verdict {
        window: digest.window,
        anomalous,
        rationale: format!(
            "detection stage failed; flag rule verdict ({} of {} nodes flagged)",
            digest.per_node.iter().filter(|d| d.node_flags.any()).count(),
            digest.per_node.len()
        ),
        degraded: true,
    }
}

/// Runs the full pipeline over one window's bundles.
///
/// `table` must already reflect the current system state; its epoch is
/// recorded in the report. Stage behavior:
///
/// - detection failure → deterministic flag-rule verdict, `error` set,
///   later stages skipped;
/// - a non-anomalous verdict closes the diagnosis gate (no error);
/// - diagnosis failure → report keeps the verdict, `error` set;
/// - an `unknown` diagnosis closes the mitigation gate (no error) unless
///   `allow_unknown_mitigation` is set;
/// - mitigation failure → report keeps verdict and diagnosis, `error` set.
pub fn run_pipeline(
    bundles: &[TelemetryBundle],
    table: &RoleTable,
    store: Option<&ExampleStore>,
    llm: &dyn LlmClient,
    config: &PipelineConfig,
) -> Result<FailureReport, MetaError> {
    let digests = collect(bundles, table, Some(llm), &config.collect)?;
    let (suspicious, score) = aggregate_node_flags(&digests, table);
    let spans: Vec<TraceSpan> = bundles
        .iter()
        .flat_map(|b| b.spans.iter().cloned())
        .collect();
    let digest = integrate_with_traces(digests, &spans)?;
    let hinted = digest.with_suspicion_hint(score, suspicious);

    let mut report = FailureReport {
        window: digest.window,
        verdict: Verdict {
            window: digest.window,
            anomalous: false,
            rationale: String::new(),
            degraded: true,
        },
        diagnosis: None,
        mitigation: None,
        role_table_epoch: table.epoch,
        error: None,
    };

    report.verdict = match detect(&hinted, store, llm, &config.agent) {
        Ok(verdict) => verdict,
        Err(err) => {
            report.error = Some(StageError {
                stage: "detect".into(),
                message: err.to_string(),
            });
            report.verdict = emergency_verdict(&hinted);
            return Ok(report);
        }
    };
    if !report.verdict.anomalous {
        return Ok(report);
    }

    let diagnosis = match diagnose(&hinted, &report.verdict, store, llm, &config.agent) {
        Ok(diagnosis) => diagnosis,
        Err(err) => {
            report.error = Some(StageError {
                stage: "diagnose".into(),
                message: err.to_string(),
            });
            return Ok(report);
        }
    };
    report.diagnosis = Some(diagnosis.clone());
    if !diagnosis.label.is_known() && !config.agent.allow_unknown_mitigation {
        return Ok(report);
    }

    match mitigate(&diagnosis, llm, &config.agent) {
        Ok(plan) => report.mitigation = Some(plan),
        Err(err) => {
            report.error = Some(StageError {
                stage: "mitigate".into(),
                message: err.to_string(),
            });
        }
    }
    Ok(report)
}

/// Writes a report to `<dir>/<window start seconds>.json` (pretty JSON plus
/// a trailing newline) and returns the path. Creates `dir` if needed. The
/// rendering is deterministic, so identical runs produce identical bytes.
pub fn write_report(dir: &Path, report: &FailureReport) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.json", report.window.start() as u64));
    let mut body = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    body.push('\n');
    std::fs::write(&path, body)?;
    Ok(path)
}
