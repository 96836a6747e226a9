//! Task agents: anomaly detection, fault diagnosis, and mitigation
//! proposals.
//!
//! The three agents run strictly in order and are gated: diagnosis requires
//! an anomalous verdict, and mitigation requires a diagnosis whose label is
//! known (unless explicitly allowed). Each agent grounds its prompt in
//! retrieved examples and the cluster digest and extracts its structured
//! decision exclusively from validated tool calls — free text is used only
//! for rationales.
//!
//! Detection is special: when the gateway is unreachable it degrades to a
//! deterministic rule (any node flag ⇒ anomalous) instead of failing, so
//! the pipeline always produces a verdict. Diagnosis and mitigation have no
//! such fallback; their failures surface to the caller.

use crate::llm::{
    ask_yes_no, ChatMessage, ChatRequest, GatewayError, LlmClient, ParamType, PromptAssembler,
    ToolChoice, ToolParam, ToolSchema,
};
use crate::meta::ClusterDigest;
use crate::rag::{ExampleStore, LabelFilter};
use crate::telemetry::{NodeId, Window};
use serde::{Deserialize, Serialize};
use serde_json::Value;

const DETECT_SYSTEM_PROMPT: &str = include_str!("../../prompts/detect_system.txt");
const DIAGNOSE_SYSTEM_PROMPT: &str = include_str!("../../prompts/diagnose_system.txt");
const MITIGATE_SYSTEM_PROMPT: &str = include_str!("../../prompts/mitigate_system.txt");

/// Errors raised by the task agents.
#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    /// A stage ran without its gate (e.g. diagnosis without an anomaly).
    #[error("gating violation: {0}")]
    Gating(String),
    /// A stage's input precondition failed (e.g. mitigating `unknown`).
    #[error("precondition violation: {0}")]
    Precondition(String),
    /// A validated tool call carried a payload the agent cannot accept.
    #[error("payload error: {0}")]
    Payload(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// The closed set of injectable fault types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultLabel {
    CpuSaturation,
    IoSaturation,
    MemorySaturation,
    NetworkDelay,
    NetworkBandwidthLimit,
    NetworkPartition,
    WorkloadSpike,
    SlowQueries,
    ExcessiveExport,
    ExcessiveImport,
}

impl FaultLabel {
    /// Every fault label, in declaration order.
    pub const ALL: [FaultLabel; 10] = [
        FaultLabel::CpuSaturation,
        FaultLabel::IoSaturation,
        FaultLabel::MemorySaturation,
        FaultLabel::NetworkDelay,
        FaultLabel::NetworkBandwidthLimit,
        FaultLabel::NetworkPartition,
        FaultLabel::WorkloadSpike,
        FaultLabel::SlowQueries,
        FaultLabel::ExcessiveExport,
        FaultLabel::ExcessiveImport,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FaultLabel::CpuSaturation => "cpu_saturation",
            FaultLabel::IoSaturation => "io_saturation",
            FaultLabel::MemorySaturation => "memory_saturation",
            FaultLabel::NetworkDelay => "network_delay",
            FaultLabel::NetworkBandwidthLimit => "network_bandwidth_limit",
            FaultLabel::NetworkPartition => "network_partition",
            FaultLabel::WorkloadSpike => "workload_spike",
            FaultLabel::SlowQueries => "slow_queries",
            FaultLabel::ExcessiveExport => "excessive_export",
            FaultLabel::ExcessiveImport => "excessive_import",
        }
    }

    /// Parses the wire string; anything else is an error carrying the
    /// offending string.
    pub fn parse_str(s: &str) -> Result<Self, String> {
        FaultLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown fault label {s:?}"))
    }
}

impl std::fmt::Display for FaultLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A diagnosis label: a known fault or `unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiagnosisLabel {
    Known(FaultLabel),
    Unknown,
}

impl DiagnosisLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiagnosisLabel::Known(f) => f.as_str(),
            DiagnosisLabel::Unknown => "unknown",
        }
    }

    pub fn parse_str(s: &str) -> Result<Self, String> {
        if s == "unknown" {
            return Ok(DiagnosisLabel::Unknown);
        }
        FaultLabel::parse_str(s).map(DiagnosisLabel::Known)
    }

    pub fn is_known(&self) -> bool {
        matches!(self, DiagnosisLabel::Known(_))
    }
}

impl Serialize for DiagnosisLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DiagnosisLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        DiagnosisLabel::parse_str(&s).map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for DiagnosisLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Detection output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub window: Window,
    pub anomalous: bool,
    /// Never empty.
    pub rationale: String,
    /// True when the gateway was unavailable and the deterministic
    /// flag-based rule decided instead of the model.
    pub degraded: bool,
}

/// Diagnosis output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub window: Window,
    pub label: DiagnosisLabel,
    /// Subset of the digest's node ids; may be empty for cluster-wide
    /// faults.
    pub suspect_nodes: Vec<NodeId>,
    pub rationale: String,
}

/// One mitigation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationAction {
    pub title: String,
    pub detail: String,
    #[serde(default)]
    pub target_nodes: Vec<NodeId>,
}

/// Mitigation output: at least one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationPlan {
    pub window: Window,
    pub actions: Vec<MitigationAction>,
    pub rationale: String,
}

/// Shared agent settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Examples retrieved per prompt (detection splits them evenly between
    /// normal and abnormal).
    pub examples_k: usize,
    /// Token budget for assembled prompt context.
    pub prompt_budget_tokens: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Permit mitigation of `unknown` diagnoses (off by default: proposing
    /// actions for an unidentified fault is guesswork).
    pub allow_unknown_mitigation: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            examples_k: 4,
            prompt_budget_tokens: 8192,
            max_tokens: 512,
            temperature: 0.0,
            allow_unknown_mitigation: false,
        }
    }
}

/// Pushes up to `k` retrieved examples as prompt blocks. Retrieval problems
/// are logged and skipped: grounding is best-effort, agents must still run
/// on an empty or mismatched store.
fn push_examples(
    assembler: &mut PromptAssembler,
    store: Option<&ExampleStore>,
    digest: &ClusterDigest,
    k: usize,
    filter: Option<LabelFilter>,
) {
    let Some(store) = store else { return };
    if store.is_empty() || k == 0 {
        return;
    }
    let query = store.featurize_cluster(digest);
    match store.retrieve(&query, k, filter) {
        Ok(hits) => {
            for (example, similarity) in hits {
                assembler.push(
                    format!("example {}", example.id),
                    format!(
                        "reference example (label {}, similarity {similarity:.3}):\n{}",
                        example.label, example.digest_text
                    ),
                );
            }
        }
        Err(err) => log::warn!("example retrieval skipped: {err}"),
    }
}

/// Marker distinguishing the queried window's digest from any reference
/// examples sharing the prompt. Replayed scripts key on this line, so it
/// must stay unique to the window under review.
pub const UNDER_REVIEW_MARKER: &str = "window under review:";

fn mark_under_review(digest: &ClusterDigest) -> String {
    format!("{UNDER_REVIEW_MARKER}\n{}", digest.text)
}

/// Deterministic detection rule used when the gateway is unreachable: the
/// window is anomalous iff any node raised a flag.
fn fallback_verdict(digest: &ClusterDigest) -> Verdict {
    let flagged: Vec<&str> = digest
        .per_node
        .iter()
        .filter(|d| d.node_flags.any())
        .map(|d| d.node_id.as_str())
        .collect();
    let anomalous = !flagged.is_empty();
    Verdict {
        window: digest.window,
        anomalous,
        rationale: if anomalous {
            format!(
                "language model unavailable; deterministic rule: node flags raised on {}",
                flagged.join(", ")
            )
        } else {
            "language model unavailable; deterministic rule: no node flags raised".to_string()
        },
        degraded: true,
    }
}

/// Runs anomaly detection over a cluster digest.
///
/// The prompt stacks retrieved examples (balanced normal/abnormal when the
/// store allows) and the digest narrative, then asks a strict yes/no
/// question through the verdict tool. Anomalous verdicts get a free-text
/// rationale in a follow-up turn. Transport failures degrade to the
/// deterministic flag rule; protocol violations are returned as errors.
pub fn detect(
    digest: &ClusterDigest,
    store: Option<&ExampleStore>,
    llm: &dyn LlmClient,
    config: &AgentConfig,
) -> Result<Verdict, AgentError> {
    let mut assembler = PromptAssembler::new(config.prompt_budget_tokens);
    let per_side = (config.examples_k / 2).max(1);
    push_examples(&mut assembler, store, digest, per_side, Some(LabelFilter::Normal));
    push_examples(&mut assembler, store, digest, per_side, Some(LabelFilter::Abnormal));
    assembler.push("digest", mark_under_review(digest));
    let context = assembler.assemble();

    let question = "Reason step by step over the digest, then answer: does this window \
                    contain an anomaly? Deliver the answer via the verdict tool.";
    let anomalous = match ask_yes_no(question, &context.text, llm) {
        Ok(answer) => answer,
        Err(GatewayError::Transport(msg)) => {
            log::warn!("detection gateway unreachable ({msg}); degrading to flag rule");
            return Ok(fallback_verdict(digest));
        }
        Err(other) => return Err(other.into()),
    };

    if !anomalous {
        return Ok(Verdict {
            window: digest.window,
            anomalous: false,
            rationale: "model judged the window normal".to_string(),
            degraded: false,
        });
    }

    // Follow-up turn for the rationale; failures here must not overturn the
    // verdict, they only degrade the explanation.
    let request = ChatRequest {
        system_prompt: DETECT_SYSTEM_PROMPT.to_string(),
        messages: vec![
            ChatMessage::user(format!("{}\n\n{question}", context.text)),
            ChatMessage::assistant("yes"),
            ChatMessage::user(
                "Briefly explain which signals made this window anomalous.".to_string(),
            ),
        ],
        tools: Vec::new(),
        tool_choice: ToolChoice::Auto,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let (rationale, degraded) = match llm.chat(&request) {
        Ok(response) => match response.text.map(|t| t.trim().to_string()) {
            Some(t) if !t.is_empty() => (t, false),
            _ => ("model gave no rationale".to_string(), false),
        },
        Err(err) => {
            log::warn!("rationale turn failed ({err}); keeping verdict with stock rationale");
            ("anomaly confirmed; rationale unavailable (gateway error)".to_string(), true)
        }
    };
    Ok(Verdict {
        window: digest.window,
        anomalous: true,
        rationale,
        degraded,
    })
}

/// Tool schema for the diagnosis decision.
fn diagnose_tool() -> ToolSchema {
    let mut labels: Vec<String> = FaultLabel::ALL.iter().map(|l| l.as_str().into()).collect();
    labels.push("unknown".into());
    ToolSchema {
        name: "diagnose".into(),
        description: "Deliver the fault diagnosis for this window.".into(),
        parameters: vec![
            ToolParam {
                name: "label".into(),
                description: "The fault type, or unknown if none fits.".into(),
                param_type: ParamType::Enum(labels),
                required: true,
            },
            ToolParam {
                name: "suspect_nodes".into(),
                description: "Node ids believed to host the fault (may be empty).".into(),
                param_type: ParamType::StringArray,
                required: false,
            },
            ToolParam {
                name: "rationale".into(),
                description: "Short justification.".into(),
                param_type: ParamType::String,
                required: false,
            },
        ],
    }
}

/// Runs fault diagnosis. Gated on an anomalous verdict. The label comes
/// from the closed enum of the diagnose tool; suspect nodes are filtered to
/// the digest's cluster membership.
pub fn diagnose(
    digest: &ClusterDigest,
    verdict: &Verdict,
    store: Option<&ExampleStore>,
    llm: &dyn LlmClient,
    config: &AgentConfig,
) -> Result<Diagnosis, AgentError> {
    if !verdict.anomalous {
        return Err(AgentError::Gating(
            "diagnosis requires an anomalous verdict".into(),
        ));
    }
    if verdict.window != digest.window {
        return Err(AgentError::Precondition(format!(
            "verdict covers {} but the digest covers {}",
            verdict.window.label(),
            digest.window.label()
        )));
    }
    let mut assembler = PromptAssembler::new(config.prompt_budget_tokens);
    push_examples(
        &mut assembler,
        store,
        digest,
        config.examples_k,
        Some(LabelFilter::Abnormal),
    );
    assembler.push("digest", mark_under_review(digest));
    assembler.push(
        "verdict",
        format!("detection verdict: anomalous. rationale: {}", verdict.rationale),
    );
    let context = assembler.assemble();

    let request = ChatRequest {
        system_prompt: DIAGNOSE_SYSTEM_PROMPT.to_string(),
        messages: vec![ChatMessage::user(format!(
            "{}\n\nReason step by step about the most likely fault type, then call the \
             diagnose tool.",
            context.text
        ))],
        tools: vec![diagnose_tool()],
        tool_choice: ToolChoice::Required,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let response = llm.chat(&request)?;
    let call = response
        .tool_call
        .ok_or_else(|| GatewayError::Protocol("diagnose tool call missing".into()))
        .map_err(AgentError::from)?;
    let label = call
        .arguments
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| AgentError::Payload("diagnose call lacks a label".into()))?;
    let label = DiagnosisLabel::parse_str(label).map_err(AgentError::Payload)?;
    let known_nodes: std::collections::BTreeSet<&str> = digest
        .per_node
        .iter()
        .map(|d| d.node_id.as_str())
        .collect();
    let suspect_nodes: Vec<NodeId> = call
        .arguments
        .get("suspect_nodes")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(Value::as_str)
                .filter(|s| known_nodes.contains(s))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let rationale = call
        .arguments
        .get("rationale")
        .and_then(Value::as_str)
        .map(str::to_string)
        .filter(|s| !s.trim().is_empty())
        .or_else(|| response.text.clone())
        .unwrap_or_else(|| "model provided no rationale".to_string());
    Ok(Diagnosis {
        window: digest.window,
        label,
        suspect_nodes,
        rationale,
    })
}

/// Tool schema for the mitigation proposal.
fn mitigate_tool() -> ToolSchema {
    ToolSchema {
        name: "propose_mitigation".into(),
        description: "Deliver an ordered list of mitigation actions.".into(),
        parameters: vec![
            ToolParam {
                name: "actions".into(),
                description: "Array of {title, detail, targets} objects, most urgent first."
                    .into(),
                param_type: ParamType::Array,
                required: true,
            },
            ToolParam {
                name: "rationale".into(),
                description: "Why these actions address the fault.".into(),
                param_type: ParamType::String,
                required: false,
            },
        ],
    }
}

/// Parses one element of the `actions` array.
fn parse_action(value: &Value) -> Result<MitigationAction, AgentError> {
    let obj = value
        .as_object()
        .ok_or_else(|| AgentError::Payload(format!("action is not an object: {value}")))?;
    let title = obj
        .get("title")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| AgentError::Payload("action needs a non-empty title".into()))?;
    let detail = obj
        .get("detail")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| AgentError::Payload("action needs a non-empty detail".into()))?;
    let target_nodes = obj
        .get("targets")
        .map(|t| {
            t.as_array()
                .map(|items| {
                    items
                        .iter()
                        .filter_map(Value::as_str)
                        .map(str::to_string)
                        .collect::<Vec<_>>()
                })
                .ok_or_else(|| AgentError::Payload("action targets must be an array".into()))
        })
        .transpose()?
        .unwrap_or_default();
    Ok(MitigationAction {
        title: title.to_string(),
        detail: detail.to_string(),
        target_nodes,
    })
}

/// Proposes mitigations for a diagnosis. Requires a known label unless
/// `allow_unknown_mitigation` is set. The plan must contain at least one
/// well-formed action.
pub fn mitigate(
    diagnosis: &Diagnosis,
    llm: &dyn LlmClient,
    config: &AgentConfig,
) -> Result<MitigationPlan, AgentError> {
    if !diagnosis.label.is_known() && !config.allow_unknown_mitigation {
        return Err(AgentError::Precondition(
            "cannot plan mitigation for an unknown fault (allow_unknown_mitigation is off)"
                .into(),
        ));
    }
    let request = ChatRequest {
        system_prompt: MITIGATE_SYSTEM_PROMPT.to_string(),
        messages: vec![ChatMessage::user(format!(
            "diagnosed fault: {}\nsuspect nodes: {}\ndiagnosis rationale: {}\nwindow: {}\n\n\
             Propose mitigation actions via the propose_mitigation tool.",
            diagnosis.label,
            if diagnosis.suspect_nodes.is_empty() {
                "(none)".to_string()
            } else {
                diagnosis.suspect_nodes.join(", ")
            },
            diagnosis.rationale,
            diagnosis.window.label(),
        ))],
        tools: vec![mitigate_tool()],
        tool_choice: ToolChoice::Required,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let response = llm.chat(&request)?;
    let call = response
        .tool_call
        .ok_or_else(|| GatewayError::Protocol("propose_mitigation call missing".into()))
        .map_err(AgentError::from)?;
    let actions_raw = call
        .arguments
        .get("actions")
        .and_then(Value::as_array)
        .ok_or_else(|| AgentError::Payload("propose_mitigation lacks an actions array".into()))?;
    if actions_raw.is_empty() {
        return Err(AgentError::Payload("mitigation plan has no actions".into()));
    }
    let actions = actions_raw
        .iter()
        .map(parse_action)
        .collect::<Result<Vec<_>, _>>()?;
    let rationale = call
        .arguments
        .get("rationale")
        .and_then(Value::as_str)
        .map(str::to_string)
        .filter(|s| !s.trim().is_empty())
        .unwrap_or_else(|| format!("standard remediation for {}", diagnosis.label));
    Ok(MitigationPlan {
        window: diagnosis.window,
        actions,
        rationale,
    })
}
