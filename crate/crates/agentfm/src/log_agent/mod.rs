//! Per-node log agent: template mining, run-length compression of template
//! streams, and short operational summaries.
//!
//! The agent turns a window's raw log lines into three increasingly compact
//! artifacts: a [`miner::ParsedMessage`] per line, a [`RunSequence`] of
//! `(template, run length)` pairs, and an [`OperationalSummary`] of at most
//! `budget` natural-language elements. Summaries prefer the language model
//! when one is supplied, but every summary element must quote constant
//! tokens from a real template — lines that don't are discarded — and a
//! deterministic fallback covers empty or unusable model output.

pub mod miner;

pub use miner::{EventTemplate, ParsedMessage, TemplateId, TemplateMiner};

use crate::llm::{ChatRequest, GatewayError, LlmClient};
use serde::{Deserialize, Serialize};

/// System prompt for the summarization call, shipped as a versioned asset.
const SUMMARIZE_SYSTEM_PROMPT: &str = include_str!("../../prompts/summarize_system.txt");

/// Errors raised by the log agent.
#[derive(Debug, thiserror::Error)]
pub enum LogAgentError {
    /// The gateway failed while summarizing. The prompt is retained so the
    /// call can be replayed or completed by a deterministic fallback.
    #[error("summarization failed: {source}")]
    Summarization {
        prompt: String,
        source: GatewayError,
    },
}

/// One maximal run of consecutive identical template ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub template_id: TemplateId,
    pub count: u64,
}

/// Run-length encoded template stream (the compressed event sequence).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunSequence {
    pub runs: Vec<Run>,
}

impl RunSequence {
    /// Total number of source events (sum of run lengths).
    pub fn source_len(&self) -> u64 {
        self.runs.iter().map(|r| r.count).sum()
    }

    /// Structural invariants: positive counts and no adjacent runs sharing a
    /// template id (maximality).
    pub fn is_canonical(&self) -> bool {
        self.runs.iter().all(|r| r.count > 0)
            && self
                .runs
                .windows(2)
                .all(|pair| pair[0].template_id != pair[1].template_id)
    }
}

/// Run-length encodes a template id stream.
pub fn compress_sequence(ids: &[TemplateId]) -> RunSequence {
    let mut runs: Vec<Run> = Vec::new();
    for &id in ids {
        match runs.last_mut() {
            Some(run) if run.template_id == id => run.count += 1,
            _ => runs.push(Run {
                template_id: id,
                count: 1,
            }),
        }
    }
    RunSequence { runs }
}

/// Expands a run sequence back into the template id stream.
pub fn expand_runs(runs: &RunSequence) -> Vec<TemplateId> {
    let mut out = Vec::with_capacity(runs.source_len() as usize);
    for run in &runs.runs {
        for _ in 0..run.count {
            out.push(run.template_id);
        }
    }
    out
}

/// A compact natural-language account of what a node was doing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalSummary {
    /// At most `max(1, budget)` short elements; never more than the number
    /// of source events when there were any.
    pub elements: Vec<String>,
    /// Number of log events the summary covers.
    pub source_count: u64,
    /// True when the language model produced the elements; false for the
    /// deterministic fallback (including the no-activity case).
    pub from_model: bool,
}

/// Renders one run as a prompt line, e.g. `- [INFO] "wrote <*> bytes" ×42`.
fn run_line(run: &Run, miner: &TemplateMiner) -> String {
    match miner.template(run.template_id) {
        Some(t) => format!("- [{}] \"{}\" ×{}", t.max_level, t.pattern, run.count),
        None => format!("- [?] template {} ×{}", run.template_id, run.count),
    }
}

/// Deterministic summary: the most frequent templates, one line each.
fn fallback_elements(runs: &RunSequence, miner: &TemplateMiner, budget: usize) -> Vec<String> {
    use std::collections::BTreeMap;
    let mut totals: BTreeMap<TemplateId, u64> = BTreeMap::new();
    for run in &runs.runs {
        *totals.entry(run.template_id).or_default() += run.count;
    }
    let mut ordered: Vec<(TemplateId, u64)> = totals.into_iter().collect();
    // Highest count first; ties keep the lower (older) template id.
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ordered
        .into_iter()
        .take(budget)
        .map(|(id, count)| match miner.template(id) {
            Some(t) => format!(
                "pattern \"{}\" occurred {count} times at level {}",
                t.pattern, t.max_level
            ),
            None => format!("pattern {id} occurred {count} times"),
        })
        .collect()
}

/// Constant tokens of a template (everything except wildcards), used to
/// check that model output is grounded in the actual logs.
fn constant_tokens(pattern: &str) -> impl Iterator<Item = &str> {
    pattern
        .split_whitespace()
        .filter(|t| *t != miner::WILDCARD)
}

/// Summarizes a compressed run sequence into at most `budget` elements.
///
/// With a model: the prompt lists every run with its template text, level,
/// and count; the reply is split into lines, and only lines quoting at least
/// one constant token of some input template survive. With no model, or
/// when filtering leaves nothing, the deterministic fallback is used.
///
/// Transport or protocol failures surface as
/// [`LogAgentError::Summarization`] carrying the prompt for replay.
pub fn summarize_operations(
    runs: &RunSequence,
    miner: &TemplateMiner,
    llm: Option<&dyn LlmClient>,
    budget: usize,
) -> Result<OperationalSummary, LogAgentError> {
    let budget = budget.max(1);
    let source_count = runs.source_len();
    if source_count == 0 {
        return Ok(OperationalSummary {
            elements: vec!["no activity".to_string()],
            source_count: 0,
            from_model: false,
        });
    }
    // Never emit more elements than there were events.
    let cap = budget.min(source_count as usize);

    let Some(llm) = llm else {
        return Ok(OperationalSummary {
            elements: fallback_elements(runs, miner, cap),
            source_count,
            from_model: false,
        });
    };

    let mut prompt = format!(
        "Summarize the node's activity in at most {cap} lines, one operational \
         element per line. Quote the template text you are describing.\n\nLog runs:\n"
    );
    for run in &runs.runs {
        prompt.push_str(&run_line(run, miner));
        prompt.push('\n');
    }
    let request = ChatRequest::text(SUMMARIZE_SYSTEM_PROMPT, prompt.clone());
    let response = llm.chat(&request).map_err(|source| LogAgentError::Summarization {
        prompt: prompt.clone(),
        source,
    })?;

    let vocabulary: std::collections::BTreeSet<&str> = runs
        .runs
        .iter()
        .filter_map(|r| miner.template(r.template_id))
        .flat_map(|t| constant_tokens(&t.pattern))
        .collect();
    // Grounding check at word granularity: a summary line survives only if
    // one of its words (modulo surrounding punctuation) is a constant token
    // of some input template.
    let grounded = |line: &str| {
        line.split_whitespace()
            .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
            .any(|w| !w.is_empty() && vocabulary.contains(w))
    };
    let elements: Vec<String> = response
        .text
        .as_deref()
        .unwrap_or("")
        .lines()
        .map(|l| l.trim().trim_start_matches(['-', '*', ' ']).to_string())
        .filter(|l| !l.is_empty())
        .filter(|l| grounded(l))
        .take(cap)
        .collect();

    if elements.is_empty() {
        return Ok(OperationalSummary {
            elements: fallback_elements(runs, miner, cap),
            source_count,
            from_model: false,
        });
    }
    Ok(OperationalSummary {
        elements,
        source_count,
        from_model: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockClient, MockScript, ScriptedResponse};
    use crate::telemetry::LogLevel;
    use proptest::prelude::*;

    fn miner_with(messages: &[&str]) -> (TemplateMiner, Vec<TemplateId>) {
        let mut miner = TemplateMiner::new();
        let ids = messages
            .iter()
            .map(|m| miner.parse_message(m, LogLevel::Info).template_id)
            .collect();
        (miner, ids)
    }

    #[test]
    fn compress_collapses_adjacent_repeats() {
        let runs = compress_sequence(&[7, 7, 7, 2, 2, 7]);
        assert_eq!(
            runs.runs,
            vec![
                Run { template_id: 7, count: 3 },
                Run { template_id: 2, count: 2 },
                Run { template_id: 7, count: 1 },
            ]
        );
        assert!(runs.is_canonical());
    }

    #[test]
    fn expand_inverts_compress() {
        let ids = vec![1, 1, 4, 4, 4, 2, 1];
        assert_eq!(expand_runs(&compress_sequence(&ids)), ids);
    }

    #[test]
    fn empty_stream_compresses_to_empty() {
        let runs = compress_sequence(&[]);
        assert!(runs.runs.is_empty());
        assert_eq!(runs.source_len(), 0);
        assert!(expand_runs(&runs).is_empty());
    }

    #[test]
    fn no_activity_summary() {
        let miner = TemplateMiner::new();
        let summary =
            summarize_operations(&RunSequence::default(), &miner, None, 5).unwrap();
        assert_eq!(summary.elements, vec!["no activity".to_string()]);
        assert_eq!(summary.source_count, 0);
        assert!(!summary.from_model);
    }

    #[test]
    fn deterministic_fallback_orders_by_frequency() {
        let (miner, ids) = miner_with(&["alpha beat", "gamma ray hit"]);
        let stream: Vec<TemplateId> =
            [vec![ids[0]; 2], vec![ids[1]; 5], vec![ids[0]; 1]].concat();
        let runs = compress_sequence(&stream);
        let summary = summarize_operations(&runs, &miner, None, 5).unwrap();
        assert_eq!(summary.source_count, 8);
        assert!(summary.elements[0].contains("gamma ray hit"));
        assert!(summary.elements[0].contains("5 times"));
        assert!(summary.elements[1].contains("alpha beat"));
    }

    #[test]
    fn summary_respects_budget_and_source_count() {
        let (miner, ids) = miner_with(&["a b", "c d", "e f", "g h"]);
        let runs = compress_sequence(&[ids[0], ids[1], ids[2], ids[3]]);
        let summary = summarize_operations(&runs, &miner, None, 2).unwrap();
        assert_eq!(summary.elements.len(), 2);
        // Cap by source count: one event can never yield two elements.
        let single = compress_sequence(&[ids[0]]);
        let summary = summarize_operations(&single, &miner, None, 9).unwrap();
        assert_eq!(summary.elements.len(), 1);
    }

    #[test]
    fn model_lines_must_quote_template_tokens() {
        let (miner, ids) = miner_with(&["flush completed in 10 ms"]);
        let runs = compress_sequence(&vec![ids[0]; 20]);
        let mut script = MockScript::default();
        script.script_response(
            "Log runs:",
            ScriptedResponse::text(
                "- flush completed repeatedly\n- unrelated hallucination line\n",
            ),
        );
        let client = MockClient::new(script);
        let summary = summarize_operations(&runs, &miner, Some(&client), 5).unwrap();
        assert!(summary.from_model);
        assert_eq!(summary.elements, vec!["flush completed repeatedly".to_string()]);
    }

    #[test]
    fn ungrounded_model_output_falls_back() {
        let (miner, ids) = miner_with(&["flush completed in 10 ms"]);
        let runs = compress_sequence(&vec![ids[0]; 3]);
        let mut script = MockScript::default();
        script.script_response("Log runs:", ScriptedResponse::text("nothing relevant"));
        let client = MockClient::new(script);
        let summary = summarize_operations(&runs, &miner, Some(&client), 5).unwrap();
        assert!(!summary.from_model);
        assert!(summary.elements[0].contains("flush completed in <*> ms"));
    }

    #[test]
    fn transport_failure_reports_prompt() {
        let (miner, ids) = miner_with(&["flush completed in 10 ms"]);
        let runs = compress_sequence(&vec![ids[0]; 3]);
        let mut script = MockScript::default();
        script.script_response("Log runs:", ScriptedResponse::TransportError("down".into()));
        let client = MockClient::new(script);
        let err = summarize_operations(&runs, &miner, Some(&client), 5).unwrap_err();
        let LogAgentError::Summarization { prompt, source } = err;
        assert!(prompt.contains("flush completed in <*> ms"));
        assert!(matches!(source, GatewayError::Transport(_)));
    }

    #[test]
    fn heavy_repetition_compresses_far_below_source_count() {
        let (miner, ids) = miner_with(&["wrote 1 bytes", "flush completed in 2 ms"]);
        let stream: Vec<TemplateId> = (0..500)
            .map(|i| if i % 50 == 0 { ids[1] } else { ids[0] })
            .collect();
        let runs = compress_sequence(&stream);
        assert!(runs.runs.len() < 25);
        let summary = summarize_operations(&runs, &miner, None, 5).unwrap();
        assert!(
            (summary.elements.len() as u64) < summary.source_count,
            "summary must be smaller than its source"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        /// expand ∘ compress == id, the encoding is canonical, and counts
        /// are conserved.
        #[test]
        fn compression_round_trip(ids in prop::collection::vec(0u64..12, 0..200)) {
            let runs = compress_sequence(&ids);
            prop_assert!(runs.is_canonical());
            prop_assert_eq!(runs.source_len() as usize, ids.len());
            prop_assert_eq!(expand_runs(&runs), ids);
        }
    }

    proptest! {
        /// Element count never exceeds `max(1, source events)` nor the budget.
        #[test]
        fn summary_size_invariant(
            ids in prop::collection::vec(0u64..4, 0..50),
            budget in 1usize..8,
        ) {
            let (miner, mapped) = miner_with(&["a b", "c d", "e f", "g h"]);
            let stream: Vec<TemplateId> = ids.iter().map(|i| mapped[*i as usize]).collect();
            let runs = compress_sequence(&stream);
            let summary = summarize_operations(&runs, &miner, None, budget).unwrap();
            prop_assert!(!summary.elements.is_empty());
            prop_assert!(summary.elements.len() <= budget.max(1));
            prop_assert!(summary.elements.len() as u64 <= summary.source_count.max(1));
        }
    }
}
