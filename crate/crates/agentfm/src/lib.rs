//! Role-aware failure management for distributed databases.
//!
//! The crate is organised as a pipeline over fixed time windows of node-local
//! telemetry:
//!
//! 1. [`telemetry`] defines the wire types (metrics, logs, traces) and the
//!    JSONL bundle format exchanged between nodes and the pipeline.
//! 2. [`log_agent`] mines log templates with a fixed-depth prefix tree and
//!    compresses template streams into run-length sequences and short
//!    operational summaries.
//! 3. [`metric_agent`] imputes and denoises raw metric series, flags z-score
//!    anomalies, and renders natural-language descriptions.
//! 4. [`roles`] tracks cluster roles (config / coordinator / storage), leader
//!    election, and per-node importance weights.
//! 5. [`meta`] assembles per-node digests into a cluster digest along trace
//!    paths and drives the detection → diagnosis → mitigation pipeline.
//! 6. [`rag`] stores labeled windows as feature vectors and retrieves the
//!    nearest examples to ground agent prompts.
//! 7. [`tasks`] implements the detection, diagnosis, and mitigation agents on
//!    top of the [`llm`] gateway (HTTP or deterministic scripted mock).
//! 8. [`simulator`] generates reproducible fault-injection campaigns and
//!    [`eval`] scores pipeline output against the injected ground truth.
//!
//! The [`cli`] module wires everything into the `agentfm` binary.

pub mod cli;
pub mod eval;
pub mod llm;
pub mod log_agent;
pub mod meta;
pub mod metric_agent;
pub mod rag;
pub mod roles;
pub mod simulator;
pub mod tasks;
pub mod telemetry;
